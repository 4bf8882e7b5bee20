#pragma once

// Inverse-transform samplers for the generalized Gaussian families.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include <boost/math/special_functions/gamma.hpp>

namespace samplers {

// |X| / beta raised to alpha is Gamma(1/alpha, 1); invert its CDF at a uniform draw.
inline double ggd_magnitude(double shape, double beta, double u) {
  return beta * std::pow(boost::math::gamma_p_inv(1.0 / shape, u), 1.0 / shape);
}

inline double ggd_beta(double shape, double sigma) {
  return sigma * std::sqrt(std::tgamma(1.0 / shape) / std::tgamma(3.0 / shape));
}

// Zero-mean GGD with variance sigma^2.
inline std::vector<double> ggd(std::size_t n, double alpha, double sigma, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double beta = ggd_beta(alpha, sigma);
  std::vector<double> x(n);
  for (auto& v : x) {
    double p = u(rng);
    while (p <= 0.0) p = u(rng);
    // Single uniform: the lower half maps to the negative side.
    v = p < 0.5 ? -ggd_magnitude(alpha, beta, 2.0 * p) : ggd_magnitude(alpha, beta, 2.0 * p - 1.0);
  }
  return x;
}

// AGGD with left/right one-sided root-mean-squares sigma_l, sigma_r.
inline std::vector<double> aggd(std::size_t n, double nu, double sigma_l, double sigma_r, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double bl = ggd_beta(nu, sigma_l), br = ggd_beta(nu, sigma_r);
  const double p_left = bl / (bl + br);
  std::vector<double> x(n);
  for (auto& v : x) {
    double p = u(rng);
    while (p <= 0.0) p = u(rng);
    v = p < p_left ? -ggd_magnitude(nu, bl, 1.0 - p / p_left) : ggd_magnitude(nu, br, (p - p_left) / (1.0 - p_left));
  }
  return x;
}

// Two-uniform variant: unit-scale magnitudes are drawn once per shape and reused, so a grid of
// scales costs one CDF inversion per sample. `side` draws pick the sign with P(left) = bl / (bl + br).
struct UnitDraws {
  double shape = 2.0;
  std::vector<double> magnitude;  // inverse CDF of |X| at beta = 1
  std::vector<double> side;       // uniform on [0, 1)
};

inline UnitDraws unit_draws(std::size_t n, double shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  UnitDraws d{shape, std::vector<double>(n), std::vector<double>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    d.magnitude[i] = ggd_magnitude(shape, 1.0, u(rng));
    d.side[i] = u(rng);
  }
  return d;
}

inline std::vector<double> aggd_from(const UnitDraws& d, double sigma_l, double sigma_r) {
  const double bl = ggd_beta(d.shape, sigma_l), br = ggd_beta(d.shape, sigma_r);
  const double p_left = bl / (bl + br);
  std::vector<double> x(d.magnitude.size());
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = d.side[i] < p_left ? -bl * d.magnitude[i] : br * d.magnitude[i];
  return x;
}

inline std::vector<double> laplace(std::size_t n, double scale, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::exponential_distribution<double> e(1.0 / scale);
  std::bernoulli_distribution s(0.5);
  std::vector<double> x(n);
  for (auto& v : x) v = s(rng) ? e(rng) : -e(rng);
  return x;
}

inline std::vector<double> gaussian(std::size_t n, double sigma, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, sigma);
  std::vector<double> x(n);
  for (auto& v : x) v = g(rng);
  return x;
}

}  // namespace samplers
