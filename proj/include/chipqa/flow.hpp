#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "chipqa/core.hpp"
#include "chipqa/videoio.hpp"

namespace chipqa {

// Dense displacement prev -> next, in pixels. u is horizontal (columns), v vertical (rows).
struct FlowField {
  Image u;
  Image v;

  int width() const { return u.width(); }
  int height() const { return u.height(); }
};

struct FlowParams {
  int pyramid_levels = 3;  // levels above the full-resolution one
  double pyramid_scale = 0.5;
  int window = 15;  // box averaging window for the displacement solve
  int iterations = 3;
  int poly_n = 5;  // half-size of the polynomial expansion neighbourhood is poly_n / 2
  double poly_sigma = 1.1;
};

class FlowEstimator {
 public:
  virtual ~FlowEstimator() = default;
  virtual FlowField estimate(const Image& prev, const Image& next) const = 0;
  virtual std::string name() const = 0;
};

namespace farneback {

// Per-pixel quadratic model f(x, y) ~ c + bx x + by y + axx x^2 + ayy y^2 + axy x y,
// stored interleaved as [bx, by, axx, ayy, axy].
struct Expansion {
  int width = 0;
  int height = 0;
  std::vector<double> coef;

  const double* at(int y, int x) const { return coef.data() + 5 * (static_cast<std::size_t>(y) * width + x); }
};

// Reflect-101 source index for each position in [-pad, n + pad).
inline std::vector<int> border_table(int n, int pad) {
  std::vector<int> t(static_cast<std::size_t>(n + 2 * pad));
  for (int i = -pad; i < n + pad; ++i) t[i + pad] = reflect101(i, n);
  return t;
}

inline Expansion expand(const Image& img, int poly_n, double sigma) {
  const int n = poly_n / 2;
  const int w = img.width(), h = img.height();
  std::vector<double> g(2 * n + 1);
  for (int t = -n; t <= n; ++t) g[t + n] = std::exp(-0.5 * t * t / (sigma * sigma));

  // Gram matrix of the basis (1, x, y, x^2, y^2, xy) under the applicability g(x) g(y).
  Eigen::Matrix<double, 6, 6> gram = Eigen::Matrix<double, 6, 6>::Zero();
  for (int y = -n; y <= n; ++y)
    for (int x = -n; x <= n; ++x) {
      Eigen::Matrix<double, 6, 1> b;
      b << 1.0, x, y, double(x) * x, double(y) * y, double(x) * y;
      gram += g[x + n] * g[y + n] * b * b.transpose();
    }
  const Eigen::Matrix<double, 6, 6> inv = gram.inverse();
  double ig[5][6];
  for (int r = 0; r < 5; ++r)
    for (int c = 0; c < 6; ++c) ig[r][c] = inv(r + 1, c);

  // Row pass: per-row weighted sums of f, x f, x^2 f over a horizontally padded copy.
  const auto xs = border_table(w, n);
  const int hh = h + 2 * n;
  std::vector<double> r0(static_cast<std::size_t>(w) * hh), r1(r0.size()), r2(r0.size());
  std::vector<double> padded(static_cast<std::size_t>(w + 2 * n));
  for (int yy = 0; yy < hh; ++yy) {
    const double* src = img.row(reflect101(yy - n, h));
    for (int i = 0; i < w + 2 * n; ++i) padded[i] = src[xs[i]];
    const std::size_t base = static_cast<std::size_t>(yy) * w;
    for (int x = 0; x < w; ++x) {
      const double* p = padded.data() + x + n;
      double s0 = 0, s1 = 0, s2 = 0;
      for (int t = -n; t <= n; ++t) {
        const double f = g[t + n] * p[t];
        s0 += f;
        s1 += t * f;
        s2 += double(t) * t * f;
      }
      r0[base + x] = s0;
      r1[base + x] = s1;
      r2[base + x] = s2;
    }
  }

  Expansion e{w, h, std::vector<double>(static_cast<std::size_t>(w) * h * 5)};
  std::vector<double> m(static_cast<std::size_t>(w) * 6);
  for (int y = 0; y < h; ++y) {
    std::fill(m.begin(), m.end(), 0.0);
    for (int t = -n; t <= n; ++t) {
      const std::size_t base = static_cast<std::size_t>(y + n + t) * w;
      const double gt = g[t + n], gtt = gt * t, gttt = gt * double(t) * t;
      const double* a0 = r0.data() + base;
      const double* a1 = r1.data() + base;
      const double* a2 = r2.data() + base;
      for (int x = 0; x < w; ++x) {
        double* mm = m.data() + 6 * x;
        mm[0] += gt * a0[x];
        mm[1] += gt * a1[x];
        mm[2] += gtt * a0[x];
        mm[3] += gt * a2[x];
        mm[4] += gttt * a0[x];
        mm[5] += gtt * a1[x];
      }
    }
    double* dst = e.coef.data() + 5 * static_cast<std::size_t>(y) * w;
    for (int x = 0; x < w; ++x) {
      const double* mm = m.data() + 6 * x;
      for (int r = 0; r < 5; ++r) {
        double acc = 0.0;
        for (int c = 0; c < 6; ++c) acc += ig[r][c] * mm[c];
        dst[5 * x + r] = acc;
      }
    }
  }
  return e;
}

// Normal-equation terms [A^T A (3), A^T db (2)] of the local displacement problem.
inline std::vector<double> update_matrices(const Expansion& e0, const Expansion& e1, const FlowField& flow) {
  const int w = e0.width, h = e0.height;
  std::vector<double> m(static_cast<std::size_t>(w) * h * 5);
  for (int y = 0; y < h; ++y) {
    const double* fu = flow.u.row(y);
    const double* fv = flow.v.row(y);
    for (int x = 0; x < w; ++x) {
      const double dx = fu[x], dy = fv[x];
      const double sx = std::clamp(x + dx, 0.0, w - 1.000001);
      const double sy = std::clamp(y + dy, 0.0, h - 1.000001);
      const int x0 = static_cast<int>(sx), y0 = static_cast<int>(sy);
      const int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
      const double ax = sx - x0, ay = sy - y0;
      const double w00 = (1 - ax) * (1 - ay), w01 = ax * (1 - ay), w10 = (1 - ax) * ay, w11 = ax * ay;
      const double* p00 = e1.at(y0, x0);
      const double* p01 = e1.at(y0, x1);
      const double* p10 = e1.at(y1, x0);
      const double* p11 = e1.at(y1, x1);
      std::array<double, 5> s{};
      for (int c = 0; c < 5; ++c) s[c] = w00 * p00[c] + w01 * p01[c] + w10 * p10[c] + w11 * p11[c];
      const double* r = e0.at(y, x);

      const double a11 = 0.5 * (r[2] + s[2]);
      const double a22 = 0.5 * (r[3] + s[3]);
      const double a12 = 0.25 * (r[4] + s[4]);
      const double bx = -0.5 * (s[0] - r[0]) + a11 * dx + a12 * dy;
      const double by = -0.5 * (s[1] - r[1]) + a12 * dx + a22 * dy;

      double* out = m.data() + 5 * (static_cast<std::size_t>(y) * w + x);
      out[0] = a11 * a11 + a12 * a12;
      out[1] = a12 * (a11 + a22);
      out[2] = a22 * a22 + a12 * a12;
      out[3] = a11 * bx + a12 * by;
      out[4] = a12 * bx + a22 * by;
    }
  }
  return m;
}

// Box sum over a (2r+1)^2 window on 5 interleaved channels, reflect-101 borders.
inline void box_blur5(std::vector<double>& m, int w, int h, int radius) {
  std::vector<double> tmp(m.size());
  std::array<double, 5> acc{};
  std::vector<int> add_x(w), sub_x(w);
  for (int x = 0; x < w; ++x) {
    add_x[x] = 5 * reflect101(x + radius + 1, w);
    sub_x[x] = 5 * reflect101(x - radius, w);
  }
  for (int y = 0; y < h; ++y) {
    const double* src = m.data() + 5 * static_cast<std::size_t>(y) * w;
    double* dst = tmp.data() + 5 * static_cast<std::size_t>(y) * w;
    acc.fill(0.0);
    for (int t = -radius; t <= radius; ++t) {
      const double* p = src + 5 * reflect101(t, w);
      for (int c = 0; c < 5; ++c) acc[c] += p[c];
    }
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 5; ++c) dst[5 * x + c] = acc[c];
      const double* add = src + add_x[x];
      const double* sub = src + sub_x[x];
      for (int c = 0; c < 5; ++c) acc[c] += add[c] - sub[c];
    }
  }
  const std::size_t stride = 5 * static_cast<std::size_t>(w);
  std::vector<double> col(stride, 0.0);
  for (int t = -radius; t <= radius; ++t) {
    const double* p = tmp.data() + stride * reflect101(t, h);
    for (std::size_t i = 0; i < stride; ++i) col[i] += p[i];
  }
  for (int y = 0; y < h; ++y) {
    std::copy(col.begin(), col.end(), m.begin() + static_cast<std::ptrdiff_t>(stride * y));
    const double* add = tmp.data() + stride * reflect101(y + radius + 1, h);
    const double* sub = tmp.data() + stride * reflect101(y - radius, h);
    for (std::size_t i = 0; i < stride; ++i) col[i] += add[i] - sub[i];
  }
}

// Solves the 2x2 system per pixel from window sums `m`; `scale` turns sums into means.
inline void solve_flow(const std::vector<double>& m, FlowField& flow, double scale = 1.0) {
  const int w = flow.width(), h = flow.height();
  for (int y = 0; y < h; ++y) {
    double* fu = flow.u.row(y);
    double* fv = flow.v.row(y);
    for (int x = 0; x < w; ++x) {
      const double* g = m.data() + 5 * (static_cast<std::size_t>(y) * w + x);
      const double g11 = g[0] * scale, g12 = g[1] * scale, g22 = g[2] * scale, h1 = g[3] * scale, h2 = g[4] * scale;
      const double idet = 1.0 / (g11 * g22 - g12 * g12 + 1e-3);
      fu[x] = (g22 * h1 - g12 * h2) * idet;
      fv[x] = (g11 * h2 - g12 * h1) * idet;
    }
  }
}

// One refinement step: update_matrices, box_blur5 and solve_flow fused over a ring of
// horizontally summed rows. Every row's terms use the flow from before this step.
inline void update_flow(const Expansion& e0, const Expansion& e1, FlowField& flow, int radius) {
  const int w = e0.width, h = e0.height;
  const int ring = 2 * radius + 3;
  const std::size_t stride = 5 * static_cast<std::size_t>(w);
  std::vector<double> rows(stride * ring), raw(stride), col(stride, 0.0);
  std::vector<int> tag(ring, -1);
  std::vector<int> add_x(w), sub_x(w);
  for (int x = 0; x < w; ++x) {
    add_x[x] = 5 * reflect101(x + radius + 1, w);
    sub_x[x] = 5 * reflect101(x - radius, w);
  }

  // Matrix terms of source row j, box-summed along x.
  const auto hrow = [&](int j) -> const double* {
    double* dst = rows.data() + stride * (j % ring);
    if (tag[j % ring] == j) return dst;
    tag[j % ring] = j;
    const double* fu = flow.u.row(j);
    const double* fv = flow.v.row(j);
    for (int x = 0; x < w; ++x) {
      const double dx = fu[x], dy = fv[x];
      const double sx = std::clamp(x + dx, 0.0, w - 1.000001);
      const double sy = std::clamp(j + dy, 0.0, h - 1.000001);
      const int x0 = static_cast<int>(sx), y0 = static_cast<int>(sy);
      const int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
      const double ax = sx - x0, ay = sy - y0;
      const double w00 = (1 - ax) * (1 - ay), w01 = ax * (1 - ay), w10 = (1 - ax) * ay, w11 = ax * ay;
      const double* p00 = e1.at(y0, x0);
      const double* p01 = e1.at(y0, x1);
      const double* p10 = e1.at(y1, x0);
      const double* p11 = e1.at(y1, x1);
      double sv[5];
      for (int c = 0; c < 5; ++c) sv[c] = w00 * p00[c] + w01 * p01[c] + w10 * p10[c] + w11 * p11[c];
      const double* r = e0.at(j, x);
      const double a11 = 0.5 * (r[2] + sv[2]);
      const double a22 = 0.5 * (r[3] + sv[3]);
      const double a12 = 0.25 * (r[4] + sv[4]);
      const double bx = -0.5 * (sv[0] - r[0]) + a11 * dx + a12 * dy;
      const double by = -0.5 * (sv[1] - r[1]) + a12 * dx + a22 * dy;
      double* out = raw.data() + 5 * static_cast<std::size_t>(x);
      out[0] = a11 * a11 + a12 * a12;
      out[1] = a12 * (a11 + a22);
      out[2] = a22 * a22 + a12 * a12;
      out[3] = a11 * bx + a12 * by;
      out[4] = a12 * bx + a22 * by;
    }
    double acc[5] = {0, 0, 0, 0, 0};
    for (int t = -radius; t <= radius; ++t) {
      const double* q = raw.data() + 5 * reflect101(t, w);
      for (int c = 0; c < 5; ++c) acc[c] += q[c];
    }
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 5; ++c) dst[5 * x + c] = acc[c];
      const double* add = raw.data() + add_x[x];
      const double* sub = raw.data() + sub_x[x];
      for (int c = 0; c < 5; ++c) acc[c] += add[c] - sub[c];
    }
    return dst;
  };

  for (int t = -radius; t <= radius; ++t) {
    const double* q = hrow(reflect101(t, h));
    for (std::size_t i = 0; i < stride; ++i) col[i] += q[i];
  }
  const double scale = 1.0 / ((2.0 * radius + 1) * (2.0 * radius + 1));
  for (int y = 0; y < h; ++y) {
    // Rows entering later windows are summed before this row's flow changes.
    const double* add = y + 1 < h ? hrow(reflect101(y + radius + 1, h)) : nullptr;
    const double* sub = y + 1 < h ? hrow(reflect101(y - radius, h)) : nullptr;
    double* fu = flow.u.row(y);
    double* fv = flow.v.row(y);
    for (int x = 0; x < w; ++x) {
      const double* g = col.data() + 5 * static_cast<std::size_t>(x);
      const double g11 = g[0] * scale, g12 = g[1] * scale, g22 = g[2] * scale, h1 = g[3] * scale, h2 = g[4] * scale;
      const double idet = 1.0 / (g11 * g22 - g12 * g12 + 1e-3);
      fu[x] = (g22 * h1 - g12 * h2) * idet;
      fv[x] = (g11 * h2 - g12 * h1) * idet;
    }
    if (add)
      for (std::size_t i = 0; i < stride; ++i) col[i] += add[i] - sub[i];
  }
}

inline Image gaussian_blur(const Image& img, double sigma) {
  const int r = std::max(1, static_cast<int>(std::lround(sigma * 2.5)));
  std::vector<double> k(2 * r + 1);
  double sum = 0.0;
  for (int t = -r; t <= r; ++t) sum += k[t + r] = std::exp(-0.5 * t * t / (sigma * sigma));
  for (double& v : k) v /= sum;
  const int w = img.width(), h = img.height();
  Image tmp(w, h), out(w, h);
  const auto xs = border_table(w, r);
  std::vector<double> padded(static_cast<std::size_t>(w + 2 * r));
  for (int y = 0; y < h; ++y) {
    const double* src = img.row(y);
    for (int i = 0; i < w + 2 * r; ++i) padded[i] = src[xs[i]];
    double* dst = tmp.row(y);
    for (int x = 0; x < w; ++x) {
      const double* p = padded.data() + x + r;
      double acc = 0.0;
      for (int t = -r; t <= r; ++t) acc += k[t + r] * p[t];
      dst[x] = acc;
    }
  }
  for (int y = 0; y < h; ++y) {
    double* dst = out.row(y);
    for (int t = -r; t <= r; ++t) {
      const double* src = tmp.row(reflect101(y + t, h));
      for (int x = 0; x < w; ++x) dst[x] += k[t + r] * src[x];
    }
  }
  return out;
}

// Bilinear resize with pixel-centre alignment.
inline Image resize_bilinear(const Image& img, int ow, int oh) {
  const int w = img.width(), h = img.height();
  Image out(ow, oh);
  const double fx = static_cast<double>(w) / ow, fy = static_cast<double>(h) / oh;
  for (int y = 0; y < oh; ++y) {
    const double sy = std::clamp((y + 0.5) * fy - 0.5, 0.0, h - 1.0);
    const int y0 = static_cast<int>(sy), y1 = std::min(y0 + 1, h - 1);
    const double ay = sy - y0;
    const double* r0 = img.row(y0);
    const double* r1 = img.row(y1);
    double* dst = out.row(y);
    for (int x = 0; x < ow; ++x) {
      const double sx = std::clamp((x + 0.5) * fx - 0.5, 0.0, w - 1.0);
      const int x0 = static_cast<int>(sx), x1 = std::min(x0 + 1, w - 1);
      const double ax = sx - x0;
      dst[x] = (1 - ay) * ((1 - ax) * r0[x0] + ax * r0[x1]) + ay * ((1 - ax) * r1[x0] + ax * r1[x1]);
    }
  }
  return out;
}

// Pyramid of one frame with the expansion of every level, coarsest first.
struct FlowPyramid {
  std::vector<Expansion> levels;
};

inline FlowPyramid build_pyramid(const Image& img, const FlowParams& p) {
  constexpr int kMinLevelSize = 32;
  const int w = img.width(), h = img.height();
  FlowPyramid pyr;
  for (int k = p.pyramid_levels; k >= 0; --k) {
    const double scale = std::pow(p.pyramid_scale, k);
    const int lw = static_cast<int>(std::lround(w * scale));
    const int lh = static_cast<int>(std::lround(h * scale));
    if (k > 0 && (lw < kMinLevelSize || lh < kMinLevelSize)) continue;
    if (k == 0) {
      pyr.levels.push_back(expand(img, p.poly_n, p.poly_sigma));
    } else {
      const double sigma = (1.0 / scale - 1.0) * 0.5;
      pyr.levels.push_back(expand(resize_bilinear(gaussian_blur(img, sigma), lw, lh), p.poly_n, p.poly_sigma));
    }
  }
  return pyr;
}

inline FlowField flow_from_pyramids(const FlowPyramid& a, const FlowPyramid& b, const FlowParams& p) {
  FlowField flow;
  for (std::size_t k = 0; k < a.levels.size(); ++k) {
    const int lw = a.levels[k].width, lh = a.levels[k].height;
    if (k == 0) {
      flow = {Image(lw, lh), Image(lw, lh)};
    } else {
      const double up = 1.0 / p.pyramid_scale;
      FlowField scaled{resize_bilinear(flow.u, lw, lh), resize_bilinear(flow.v, lw, lh)};
      for (double& x : scaled.u.storage()) x *= up;
      for (double& x : scaled.v.storage()) x *= up;
      flow = std::move(scaled);
    }
    for (int it = 0; it < p.iterations; ++it) update_flow(a.levels[k], b.levels[k], flow, p.window / 2);
  }
  return flow;
}

inline void check_flow_inputs(const Image& prev, const Image& next, const FlowParams& p) {
  if (!prev.same_shape(next)) throw Error(ErrorCode::DimensionMismatch, "flow frames differ in size");
  if (prev.width() < 2 * p.poly_n || prev.height() < 2 * p.poly_n)
    throw Error(ErrorCode::FrameTooSmall, "flow needs frames of at least " + std::to_string(2 * p.poly_n) + " px");
}

}  // namespace farneback

inline FlowField estimate_flow(const Image& prev, const Image& next, const FlowParams& p = {}) {
  farneback::check_flow_inputs(prev, next, p);
  return farneback::flow_from_pyramids(farneback::build_pyramid(prev, p), farneback::build_pyramid(next, p), p);
}

inline FlowField estimate_flow(const Frame& prev, const Frame& next, const FlowParams& p = {}) {
  return estimate_flow(prev.luma, next.luma, p);
}

// Keeps the pyramid of the most recent `next` frame per frame size, so a stream of
// consecutive pairs expands each frame once. Results are identical to estimate_flow.
class FarnebackFlow final : public FlowEstimator {
 public:
  explicit FarnebackFlow(FlowParams p = {}) : params_(p) {}

  FlowField estimate(const Image& prev, const Image& next) const override {
    farneback::check_flow_inputs(prev, next, params_);
    std::shared_ptr<const farneback::FlowPyramid> a;
    {
      std::lock_guard lock(mutex_);
      for (const auto& c : cache_)
        if (c.image == prev) a = c.pyramid;
    }
    if (!a) a = std::make_shared<const farneback::FlowPyramid>(farneback::build_pyramid(prev, params_));
    auto b = std::make_shared<const farneback::FlowPyramid>(farneback::build_pyramid(next, params_));
    {
      std::lock_guard lock(mutex_);
      auto it = std::find_if(cache_.begin(), cache_.end(), [&](const Entry& c) { return c.image.same_shape(next); });
      if (it == cache_.end()) {
        if (cache_.size() >= kCacheSlots) cache_.erase(cache_.begin());
        cache_.push_back({next, b});
      } else {
        *it = {next, b};
      }
    }
    return farneback::flow_from_pyramids(*a, *b, params_);
  }
  std::string name() const override { return "farneback"; }
  const FlowParams& params() const { return params_; }

 private:
  static constexpr std::size_t kCacheSlots = 4;
  struct Entry {
    Image image;
    std::shared_ptr<const farneback::FlowPyramid> pyramid;
  };
  FlowParams params_;
  mutable std::mutex mutex_;
  mutable std::vector<Entry> cache_;
};

// Reports no motion anywhere; chips then fall back to the default direction.
class ZeroFlow final : public FlowEstimator {
 public:
  FlowField estimate(const Image& prev, const Image& next) const override {
    if (!prev.same_shape(next)) throw Error(ErrorCode::DimensionMismatch, "flow frames differ in size");
    return {Image(prev.width(), prev.height()), Image(prev.width(), prev.height())};
  }
  std::string name() const override { return "zero"; }
};

inline std::unique_ptr<FlowEstimator> make_flow_estimator(const std::string& name, FlowParams p = {}) {
  if (name == "farneback") return std::make_unique<FarnebackFlow>(p);
  if (name == "zero") return std::make_unique<ZeroFlow>();
  throw Error(ErrorCode::InvalidArgument, "unknown flow estimator '" + name + "'");
}

struct PatchFlowGrid {
  Image med_u;  // rows = floor(height / R), cols = floor(width / R)
  Image med_v;
  int patch_size = 0;

  int rows() const { return med_u.height(); }
  int cols() const { return med_u.width(); }
};

// Lower-middle order statistic (index (n-1)/2 after sorting).
inline double lower_median(std::vector<double>& v) {
  auto mid = v.begin() + static_cast<std::ptrdiff_t>((v.size() - 1) / 2);
  std::nth_element(v.begin(), mid, v.end());
  return *mid;
}

inline PatchFlowGrid median_pool(const FlowField& flow, int R) {
  if (R < 1) throw Error(ErrorCode::InvalidArgument, "patch size must be >= 1");
  if (flow.width() < R || flow.height() < R)
    throw Error(ErrorCode::FrameTooSmall, "flow field smaller than one patch");
  const int rows = flow.height() / R, cols = flow.width() / R;
  PatchFlowGrid g{Image(cols, rows), Image(cols, rows), R};
  std::vector<double> bu(static_cast<std::size_t>(R) * R), bv(bu.size());
  for (int pr = 0; pr < rows; ++pr)
    for (int pc = 0; pc < cols; ++pc) {
      std::size_t i = 0;
      for (int y = pr * R; y < (pr + 1) * R; ++y)
        for (int x = pc * R; x < (pc + 1) * R; ++x, ++i) {
          bu[i] = flow.u(y, x);
          bv[i] = flow.v(y, x);
        }
      g.med_u(pr, pc) = lower_median(bu);
      g.med_v(pr, pc) = lower_median(bv);
    }
  return g;
}

// Raw float32 dump: u plane then v plane, row-major, no header.
inline void dump_flow(const std::string& path, const FlowField& f) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot create '" + path + "'");
  for (const Image* plane : {&f.u, &f.v}) {
    std::vector<float> buf(plane->storage().begin(), plane->storage().end());
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
  }
}

}  // namespace chipqa
