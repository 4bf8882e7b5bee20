#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "chipqa/core.hpp"
#include "chipqa/videoio.hpp"

namespace chipqa {

enum class FieldKind : std::uint32_t { raw = 0, mscn, mean, sigma, gradient_magnitude, paired_product };

struct Field {
  Image values;
  FieldKind kind = FieldKind::raw;

  int width() const { return values.width(); }
  int height() const { return values.height(); }
};

// Separable, circularly symmetric Gaussian sampled on [-K, K]^2 and normalised to unit volume.
struct GaussianWindow {
  int half_width = 3;
  double sigma = 7.0 / 6.0;
  std::vector<double> taps;  // 1-D factor, length 2K+1, unit sum

  // K defaults to floor(3 sigma), i.e. the window reaches three standard deviations.
  static GaussianWindow make(double sigma = 7.0 / 6.0, int half_width = -1) {
    if (!(sigma > 0.0)) throw Error(ErrorCode::InvalidArgument, "window sigma must be positive");
    GaussianWindow w;
    w.sigma = sigma;
    w.half_width = half_width >= 0 ? half_width : std::max(1, static_cast<int>(std::floor(3.0 * sigma)));
    w.taps.resize(2 * w.half_width + 1);
    double sum = 0.0;
    for (int k = -w.half_width; k <= w.half_width; ++k)
      sum += w.taps[k + w.half_width] = std::exp(-0.5 * k * k / (sigma * sigma));
    for (double& t : w.taps) t /= sum;
    return w;
  }

  int size() const { return 2 * half_width + 1; }
  double weight(int k, int l) const { return taps[k + half_width] * taps[l + half_width]; }
};

// Normalisation constant for the MSCN denominator, scaled with the code-value range.
inline double default_mscn_constant(int bit_depth) { return bit_depth > 8 ? 4.0 : 1.0; }

struct LocalMoments {
  Field mean;
  Field sigma;
};

namespace detail {

// Copy of `img` with `pad` reflect-101 samples on every side.
inline Image pad_reflect(const Image& img, int pad) {
  const int w = img.width(), h = img.height();
  Image out(w + 2 * pad, h + 2 * pad);
  for (int y = 0; y < out.height(); ++y) {
    const double* src = img.row(reflect101(y - pad, h));
    double* dst = out.row(y);
    for (int x = 0; x < out.width(); ++x) dst[x] = src[reflect101(x - pad, w)];
  }
  return out;
}

}  // namespace detail

inline LocalMoments local_moments(const Image& img, const GaussianWindow& win) {
  const int K = win.half_width;
  const int w = img.width(), h = img.height();
  if (w < 2 * K + 1 || h < 2 * K + 1)
    throw Error(ErrorCode::FrameTooSmall, "local_moments needs at least " + std::to_string(2 * K + 1) +
                                              " samples per side, got " + std::to_string(w) + "x" +
                                              std::to_string(h));
  const Image padded = detail::pad_reflect(img, K);
  const double c0 = mean_of(img.values());

  // Separable sums of (I - c0) and (I - c0)^2: horizontal then vertical pass.
  Image h1(w, h + 2 * K), h2(w, h + 2 * K);
  std::vector<double> centred(static_cast<std::size_t>(w + 2 * K));
  for (int y = 0; y < h + 2 * K; ++y) {
    const double* src = padded.row(y);
    for (int x = 0; x < w + 2 * K; ++x) centred[x] = src[x] - c0;
    double* d1 = h1.row(y);
    double* d2 = h2.row(y);
    for (int l = -K; l <= K; ++l) {
      const double t = win.taps[l + K];
      const double* s = centred.data() + K + l;
      for (int x = 0; x < w; ++x) {
        d1[x] += t * s[x];
        d2[x] += t * s[x] * s[x];
      }
    }
  }
  LocalMoments m{{Image(w, h), FieldKind::mean}, {Image(w, h), FieldKind::sigma}};
  std::vector<double> m1(static_cast<std::size_t>(w)), m2(m1.size());
  for (int y = 0; y < h; ++y) {
    std::fill(m1.begin(), m1.end(), 0.0);
    std::fill(m2.begin(), m2.end(), 0.0);
    for (int k = -K; k <= K; ++k) {
      const double t = win.taps[k + K];
      const double* s1 = h1.row(y + K + k);
      const double* s2 = h2.row(y + K + k);
      for (int x = 0; x < w; ++x) {
        m1[x] += t * s1[x];
        m2[x] += t * s2[x];
      }
    }
    double* mu = m.mean.values.row(y);
    double* sd = m.sigma.values.row(y);
    for (int x = 0; x < w; ++x) {
      mu[x] = m1[x] + c0;
      double var = m2[x] - m1[x] * m1[x];
      // Where cancellation could dominate, take the variance about the local mean literally.
      if (var < 1e-6 * (1.0 + m1[x] * m1[x])) {
        var = 0.0;
        for (int k = -K; k <= K; ++k) {
          const double* prow = padded.row(y + K + k) + x + K;
          for (int l = -K; l <= K; ++l) {
            const double d = prow[l] - mu[x];
            var += win.taps[k + K] * win.taps[l + K] * d * d;
          }
        }
      }
      sd[x] = var > 0.0 ? std::sqrt(var) : 0.0;
    }
  }
  return m;
}

inline Field mscn_from_moments(const Image& img, const LocalMoments& m, double c) {
  Field out{Image(img.width(), img.height()), FieldKind::mscn};
  const auto& src = img.storage();
  const auto& mu = m.mean.values.storage();
  const auto& sd = m.sigma.values.storage();
  auto& dst = out.values.storage();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = (src[i] - mu[i]) / (sd[i] + c);
  return out;
}

inline Field mscn(const Image& img, const GaussianWindow& win, double c) {
  if (!(c > 0.0)) throw Error(ErrorCode::InvalidArgument, "MSCN constant must be positive");
  return mscn_from_moments(img, local_moments(img, win), c);
}

inline Field sobel_magnitude(const Image& img) {
  const int w = img.width(), h = img.height();
  if (w < 3 || h < 3) throw Error(ErrorCode::FrameTooSmall, "sobel_magnitude needs at least 3x3");
  const Image p = detail::pad_reflect(img, 1);
  Field out{Image(w, h), FieldKind::gradient_magnitude};
  for (int y = 0; y < h; ++y) {
    const double* up = p.row(y);
    const double* mid = p.row(y + 1);
    const double* dn = p.row(y + 2);
    double* dst = out.values.row(y);
    for (int x = 0; x < w; ++x) {
      const double gx = (up[x + 2] - up[x]) + 2.0 * (mid[x + 2] - mid[x]) + (dn[x + 2] - dn[x]);
      const double gy = (dn[x] - up[x]) + 2.0 * (dn[x + 1] - up[x + 1]) + (dn[x + 2] - up[x + 2]);
      dst[x] = std::sqrt(gx * gx + gy * gy);
    }
  }
  return out;
}

// Debug dump: "CQAF", u32 version, i32 width, i32 height, u32 kind, float32 samples row-major.
inline void dump_field(const std::string& path, const Field& f) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot create '" + path + "'");
  const std::uint32_t version = 1;
  const std::int32_t w = f.width(), h = f.height();
  const auto kind = static_cast<std::uint32_t>(f.kind);
  out.write("CQAF", 4);
  out.write(reinterpret_cast<const char*>(&version), 4);
  out.write(reinterpret_cast<const char*>(&w), 4);
  out.write(reinterpret_cast<const char*>(&h), 4);
  out.write(reinterpret_cast<const char*>(&kind), 4);
  std::vector<float> buf(f.values.storage().begin(), f.values.storage().end());
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
}

inline Field load_field(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open '" + path + "'");
  char magic[4];
  std::uint32_t version = 0, kind = 0;
  std::int32_t w = 0, h = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&version), 4);
  in.read(reinterpret_cast<char*>(&w), 4);
  in.read(reinterpret_cast<char*>(&h), 4);
  in.read(reinterpret_cast<char*>(&kind), 4);
  if (!in || std::string(magic, 4) != "CQAF" || version != 1 || w < 0 || h < 0)
    throw Error(ErrorCode::MalformedHeader, path + ": not a field dump");
  std::vector<float> buf(static_cast<std::size_t>(w) * h);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (static_cast<std::size_t>(in.gcount()) != buf.size() * sizeof(float))
    throw Error(ErrorCode::TruncatedPayload, path + ": short field dump");
  Field f{Image(w, h), static_cast<FieldKind>(kind)};
  std::copy(buf.begin(), buf.end(), f.values.storage().begin());
  return f;
}

}  // namespace chipqa
