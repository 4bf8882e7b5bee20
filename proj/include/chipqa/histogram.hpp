#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "chipqa/core.hpp"

namespace chipqa {

struct Histogram {
  double lo = 0.0;
  double hi = 1.0;
  std::vector<double> density;  // integrates to 1 over [lo, hi)

  int bins() const { return static_cast<int>(density.size()); }
  double bin_width() const { return (hi - lo) / bins(); }
  double center(int i) const { return lo + (i + 0.5) * bin_width(); }
};

// Samples outside [lo, hi] are ignored; hi itself falls in the last bin.
inline Histogram make_histogram(std::span<const double> x, int bins, double lo, double hi) {
  if (bins < 1 || !(hi > lo)) throw Error(ErrorCode::InvalidArgument, "histogram needs bins >= 1 and hi > lo");
  Histogram h{lo, hi, std::vector<double>(static_cast<std::size_t>(bins), 0.0)};
  std::size_t used = 0;
  for (double v : x) {
    if (!(v >= lo && v <= hi)) continue;
    const int b = std::min(bins - 1, static_cast<int>((v - lo) / (hi - lo) * bins));
    h.density[b] += 1.0;
    ++used;
  }
  if (used == 0) throw Error(ErrorCode::EmptyInput, "no samples inside the histogram range");
  const double scale = 1.0 / (static_cast<double>(used) * h.bin_width());
  for (double& d : h.density) d *= scale;
  return h;
}

inline Histogram make_histogram(std::span<const double> x, int bins) {
  if (x.empty()) throw Error(ErrorCode::EmptyInput, "empty sample");
  const auto [mn, mx] = std::minmax_element(x.begin(), x.end());
  const double lo = *mn, hi = *mx > *mn ? *mx : *mn + 1.0;
  return make_histogram(x, bins, lo, hi);
}

struct KsResult {
  double statistic = 0.0;
  double p_value = 1.0;
};

// Asymptotic Kolmogorov tail Q(lambda) = 2 sum (-1)^(k-1) exp(-2 k^2 lambda^2).
inline double kolmogorov_q(double lambda) {
  if (lambda < 1e-3) return 1.0;
  double sum = 0.0, sign = 1.0;
  for (int k = 1; k <= 200; ++k) {
    const double term = sign * std::exp(-2.0 * k * k * lambda * lambda);
    sum += term;
    if (std::abs(term) <= 1e-12 * std::abs(sum) || std::abs(term) <= 1e-300) return std::clamp(2.0 * sum, 0.0, 1.0);
    sign = -sign;
  }
  return 1.0;
}

// Two-sample Kolmogorov-Smirnov test with Stephens' effective-n correction.
inline KsResult ks_two_sample(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw Error(ErrorCode::EmptyInput, "KS test needs two nonempty samples");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double v = std::min(a[i], b[j]);
    while (i < a.size() && a[i] == v) ++i;
    while (j < b.size() && b[j] == v) ++j;
    d = std::max(d, std::abs(i / na - j / nb));
  }
  const double ne = std::sqrt(na * nb / (na + nb));
  return {d, kolmogorov_q((ne + 0.12 + 0.11 / ne) * d)};
}

}  // namespace chipqa
