#pragma once

#include <array>
#include <cmath>
#include <span>
#include <vector>

#include "chipqa/chips.hpp"
#include "chipqa/core.hpp"

namespace chipqa {

struct GGDParams {
  double alpha = 2.0;
  double sigma_sq = 0.0;
};

struct AGGDParams {
  double eta = 0.0;
  double nu = 2.0;
  double sigma_l_sq = 0.0;
  double sigma_r_sq = 0.0;
};

inline constexpr GGDParams kGgdFallback{2.0, 0.0};
inline constexpr AGGDParams kAggdFallback{0.0, 2.0, 0.0, 0.0};

// Shape grid shared by the GGD and AGGD estimators: [0.05, 10] in steps of 0.001.
class ShapeGrid {
 public:
  static constexpr double kMin = 0.05;
  static constexpr double kStep = 0.001;
  static constexpr int kCount = 9951;

  static const ShapeGrid& instance() {
    static const ShapeGrid grid;
    return grid;
  }

  static double shape_at(int i) { return kMin + i * kStep; }

  // Gamma(2/a)^2 / (Gamma(1/a) Gamma(3/a)); increases monotonically from 0 towards 3/4.
  static double moment_ratio(double a) {
    return std::exp(2.0 * std::lgamma(2.0 / a) - std::lgamma(1.0 / a) - std::lgamma(3.0 / a));
  }

  const std::vector<double>& ratios() const { return ratios_; }

  // Grid point minimising |ratio - target|; ties go to the smaller shape.
  double argmin(double target) const {
    const auto it = std::lower_bound(ratios_.begin(), ratios_.end(), target);
    int j = static_cast<int>(it - ratios_.begin());
    if (j >= kCount) return shape_at(kCount - 1);
    if (j > 0 && std::abs(ratios_[j - 1] - target) <= std::abs(ratios_[j] - target)) --j;
    return shape_at(j);
  }

 private:
  ShapeGrid() : ratios_(kCount) {
    for (int i = 0; i < kCount; ++i) ratios_[i] = moment_ratio(shape_at(i));
  }
  std::vector<double> ratios_;
};

inline constexpr std::size_t kMinFitSamples = 100;

// Running sums for the GGD moment-matching fit.
struct GgdMoments {
  std::size_t n = 0;
  double abs_sum = 0.0, sq_sum = 0.0, sum = 0.0;

  void add(double v) {
    ++n;
    abs_sum += std::abs(v);
    sq_sum += v * v;
    sum += v;
  }

  GGDParams fit() const {
    if (n < kMinFitSamples)
      throw Error(ErrorCode::TooFewSamples, "GGD fit needs >= 100 samples, got " + std::to_string(n));
    const double nn = static_cast<double>(n);
    const double mean = sum / nn;
    const double var = sq_sum / nn - mean * mean;
    if (!(var > 1e-12)) throw Error(ErrorCode::DegenerateInput, "near-constant samples");
    const double mean_abs = abs_sum / nn, mean_sq = sq_sum / nn;
    const double ratio = mean_abs * mean_abs / mean_sq;
    return {ShapeGrid::instance().argmin(ratio), mean_sq};
  }
};

// Running sums for the AGGD fit; samples below zero form the left side.
struct AggdMoments {
  std::size_t n = 0, n_left = 0;
  double left_sq = 0.0, right_sq = 0.0, abs_sum = 0.0, sum = 0.0;

  void add(double v) {
    const double lo = std::min(v, 0.0), hi = std::max(v, 0.0);
    left_sq += lo * lo;
    right_sq += hi * hi;
    ++n;
    n_left += static_cast<std::size_t>(v < 0.0);
    abs_sum += hi - lo;
    sum += v;
  }

  AGGDParams fit() const {
    if (n < kMinFitSamples)
      throw Error(ErrorCode::TooFewSamples, "AGGD fit needs >= 100 samples, got " + std::to_string(n));
    const std::size_t n_right = n - n_left;
    const double nn = static_cast<double>(n);
    const double mean = sum / nn, mean_sq = (left_sq + right_sq) / nn;
    if (!(mean_sq - mean * mean > 1e-12)) throw Error(ErrorCode::DegenerateInput, "near-constant samples");
    if (n_left < 10 || n_right < 10)
      throw Error(ErrorCode::OneSidedInput, "AGGD fit needs >= 10 samples on each side of zero");
    const double sl_sq = left_sq / static_cast<double>(n_left);
    const double sr_sq = right_sq / static_cast<double>(n_right);
    if (!(sl_sq > 0.0) || !(sr_sq > 0.0)) throw Error(ErrorCode::DegenerateInput, "one side is identically zero");

    const double gamma_hat = std::sqrt(sl_sq) / std::sqrt(sr_sq);
    const double mean_abs = abs_sum / nn;
    const double r_hat = mean_abs * mean_abs / mean_sq;
    const double g2 = gamma_hat * gamma_hat;
    const double big_r = r_hat * (g2 * gamma_hat + 1.0) * (gamma_hat + 1.0) / ((g2 + 1.0) * (g2 + 1.0));
    const double nu = ShapeGrid::instance().argmin(big_r);

    const double lg1 = std::lgamma(1.0 / nu), lg2 = std::lgamma(2.0 / nu), lg3 = std::lgamma(3.0 / nu);
    const double spread = std::exp(0.5 * (lg1 - lg3));
    const double beta_l = std::sqrt(sl_sq) * spread;
    const double beta_r = std::sqrt(sr_sq) * spread;
    const double eta = (beta_r - beta_l) * std::exp(lg2 - lg1);
    return {eta, nu, sl_sq, sr_sq};
  }
};

inline GGDParams fit_ggd(std::span<const double> x) {
  GgdMoments m;
  for (double v : x) m.add(v);
  return m.fit();
}

inline AGGDParams fit_aggd(std::span<const double> x) {
  AggdMoments m;
  for (double v : x) m.add(v);
  return m.fit();
}

struct PairedProducts {
  Image h;   // S(i,j) S(i,j+1)
  Image v;   // S(i,j) S(i+1,j)
  Image d1;  // S(i,j) S(i+1,j+1)
  Image d2;  // S(i,j) S(i+1,j-1), column j-1 holds j >= 1

  std::array<const Image*, 4> all() const { return {&h, &v, &d1, &d2}; }
};

inline PairedProducts paired_products(const Image& s) {
  const int w = s.width(), h = s.height();
  if (w < 2 || h < 2) throw Error(ErrorCode::FrameTooSmall, "paired products need at least 2x2");
  PairedProducts p{Image(w - 1, h), Image(w, h - 1), Image(w - 1, h - 1), Image(w - 1, h - 1)};
  for (int i = 0; i < h; ++i) {
    const double* r = s.row(i);
    double* hr = p.h.row(i);
    for (int j = 0; j + 1 < w; ++j) hr[j] = r[j] * r[j + 1];
  }
  for (int i = 0; i + 1 < h; ++i) {
    const double* r = s.row(i);
    const double* below = s.row(i + 1);
    double* vr = p.v.row(i);
    double* d1r = p.d1.row(i);
    double* d2r = p.d2.row(i);
    for (int j = 0; j < w; ++j) vr[j] = r[j] * below[j];
    for (int j = 0; j + 1 < w; ++j) d1r[j] = r[j] * below[j + 1];
    for (int j = 1; j < w; ++j) d2r[j - 1] = r[j] * below[j - 1];
  }
  return p;
}

inline constexpr int kDomainFeatureCount = 36;
inline constexpr int kScaleBlockCount = 18;  // GGD (2) + 4 orientations x AGGD (4)

struct DomainFeatures {
  std::array<double, kDomainFeatureCount> values{};
  bool degenerate = false;
};

// 18 features for one field or patch: AGGD blocks are written to `aggd_out` (16 values),
// GGD pair to `ggd_out` (2 values). Returns true if any sub-fit fell back. Paired products
// are formed on the fly; each orientation accumulates in the row-major order of its array.
inline bool fit_scale_block(const Image& s, double* ggd_out, double* aggd_out) {
  const int w = s.width(), h = s.height();
  GgdMoments gm;
  for (double v : s.values()) gm.add(v);
  // Horizontal, vertical, main- and anti-diagonal neighbours: (row step, column step).
  constexpr int kSteps[4][2] = {{0, 1}, {1, 0}, {1, 1}, {1, -1}};
  std::array<AggdMoments, 4> am;
  for (int o = 0; o < 4; ++o) {
    const int di = kSteps[o][0], dj = kSteps[o][1];
    const int j0 = dj < 0 ? 1 : 0, j1 = dj > 0 ? w - 1 : w;
    AggdMoments acc;
    for (int i = 0; i + di < h; ++i) {
      const double* r = s.row(i);
      const double* q = s.row(i + di) + dj;
      for (int j = j0; j < j1; ++j) acc.add(r[j] * q[j]);
    }
    am[o] = acc;
  }

  bool degenerate = false;
  GGDParams g = kGgdFallback;
  try {
    g = gm.fit();
  } catch (const Error&) {
    degenerate = true;
  }
  ggd_out[0] = g.alpha;
  ggd_out[1] = g.sigma_sq;

  for (int o = 0; o < 4; ++o) {
    AGGDParams a = kAggdFallback;
    try {
      if (w < 2 || h < 2) throw Error(ErrorCode::FrameTooSmall, "paired products need at least 2x2");
      a = am[o].fit();
    } catch (const Error&) {
      degenerate = true;
    }
    aggd_out[4 * o + 0] = a.eta;
    aggd_out[4 * o + 1] = a.nu;
    aggd_out[4 * o + 2] = a.sigma_l_sq;
    aggd_out[4 * o + 3] = a.sigma_r_sq;
  }
  return degenerate;
}

// [GGD s1 (a, s2)] [GGD s2 (a, s2)] then for s1, s2 and H, V, D1, D2: (eta, nu, sl2, sr2).
inline DomainFeatures domain_features(const Image& scale1, const Image& scale2) {
  DomainFeatures f;
  f.degenerate |= fit_scale_block(scale1, f.values.data() + 0, f.values.data() + 4);
  f.degenerate |= fit_scale_block(scale2, f.values.data() + 2, f.values.data() + 20);
  return f;
}

inline DomainFeatures domain_features(const ChipFrame& s1, const ChipFrame& s2) {
  return domain_features(s1.values, s2.values);
}

}  // namespace chipqa
