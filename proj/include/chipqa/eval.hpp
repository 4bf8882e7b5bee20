#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/distributions/students_t.hpp>
#include <json.hpp>
#include <unsupported/Eigen/LevenbergMarquardt>

#include "chipqa/core.hpp"
#include "chipqa/model.hpp"
#include "chipqa/stats.hpp"

namespace chipqa {

// Q = b2 + (b1 - b2) / (1 + exp(-(q - b3) / |b4|)). When the logistic loses to a straight
// line the fit falls back to Q = intercept + slope * q and sets `linear`.
struct LogisticParams {
  double b1 = 1.0, b2 = 0.0, b3 = 0.0, b4 = 1.0;
  bool linear = false;
  double slope = 0.0, intercept = 0.0;

  double operator()(double q) const {
    if (linear) return intercept + slope * q;
    return b2 + (b1 - b2) / (1.0 + std::exp(-(q - b3) / std::abs(b4)));
  }
};

namespace detail {

// Parameters (b2, d, b3, b4) with b1 = b2 + |d| so the curve can only increase.
struct LogisticFunctor : Eigen::DenseFunctor<double> {
  LogisticFunctor(std::span<const double> q, std::span<const double> y)
      : Eigen::DenseFunctor<double>(4, static_cast<int>(q.size())), q_(q), y_(y) {}

  static LogisticParams params(const Eigen::VectorXd& x) {
    LogisticParams p;
    p.b2 = x[0];
    p.b1 = x[0] + std::abs(x[1]);
    p.b3 = x[2];
    p.b4 = std::max(std::abs(x[3]), 1e-12);
    return p;
  }

  int operator()(const Eigen::VectorXd& x, Eigen::VectorXd& fvec) const {
    const LogisticParams p = params(x);
    for (std::size_t i = 0; i < q_.size(); ++i) fvec[static_cast<Eigen::Index>(i)] = p(q_[i]) - y_[i];
    return 0;
  }

  std::span<const double> q_, y_;
};

inline double sse(const LogisticParams& p, std::span<const double> q, std::span<const double> y) {
  double s = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) s += (p(q[i]) - y[i]) * (p(q[i]) - y[i]);
  return s;
}

inline double mean(std::span<const double> x) { return std::accumulate(x.begin(), x.end(), 0.0) / x.size(); }

inline double stddev(std::span<const double> x) {
  const double m = mean(x);
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return std::sqrt(s / x.size());
}

// Least-squares line with the slope clamped at zero so the map stays non-decreasing.
inline LogisticParams fit_line(std::span<const double> q, std::span<const double> y) {
  const double mq = mean(q), my = mean(y);
  double sqy = 0.0, sqq = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    sqy += (q[i] - mq) * (y[i] - my);
    sqq += (q[i] - mq) * (q[i] - mq);
  }
  LogisticParams p;
  p.linear = true;
  p.slope = sqq > 0.0 ? std::max(0.0, sqy / sqq) : 0.0;
  p.intercept = my - p.slope * mq;
  return p;
}

}  // namespace detail

inline LogisticParams fit_logistic(std::span<const double> pred, std::span<const double> mos) {
  if (pred.size() != mos.size()) throw Error(ErrorCode::LengthMismatch, "pred and mos differ in length");
  if (pred.size() < 5) throw Error(ErrorCode::TooFewSamples, "logistic fit needs >= 5 points");
  const auto [lo, hi] = std::minmax_element(mos.begin(), mos.end());
  if (!(*hi > *lo)) throw Error(ErrorCode::FitDiverged, "mos has zero variance");

  const double sd = detail::stddev(pred);
  Eigen::VectorXd x(4);
  x << *lo, *hi - *lo, detail::mean(pred), sd > 0.0 ? sd : 1.0;
  detail::LogisticFunctor f(pred, mos);
  Eigen::NumericalDiff<detail::LogisticFunctor> nd(f);
  Eigen::LevenbergMarquardt<Eigen::NumericalDiff<detail::LogisticFunctor>> lm(nd);
  lm.setMaxfev(2000);
  lm.minimize(x);

  LogisticParams best = detail::LogisticFunctor::params(x);
  const LogisticParams line = detail::fit_line(pred, mos);
  const double logistic_sse = detail::sse(best, pred, mos);
  if (!std::isfinite(logistic_sse) || logistic_sse > detail::sse(line, pred, mos)) best = line;
  return best;
}

// Pearson correlation after the monotone map; a map that collapses to a constant scores 0.
inline double lcc(std::span<const double> pred, std::span<const double> mos) {
  const LogisticParams p = fit_logistic(pred, mos);
  std::vector<double> mapped(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) mapped[i] = p(pred[i]);
  const auto [lo, hi] = std::minmax_element(mapped.begin(), mapped.end());
  if (!(*hi - *lo > 1e-12 * std::max(1.0, std::abs(*hi)))) return 0.0;
  return pearson(mapped, mos);
}

struct SplitPlan {
  std::uint64_t seed = 0;
  std::set<std::string> train_ids;
  std::set<std::string> test_ids;
  double fraction = 0.8;
};

// Shuffles distinct content ids and sends round(fraction * groups) of them to train.
inline SplitPlan make_split(std::span<const std::string> content_ids, std::uint64_t seed, double fraction = 0.8) {
  std::vector<std::string> ids(content_ids.begin(), content_ids.end());
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  if (ids.size() < 2) throw Error(ErrorCode::TooFewGroups, "a split needs at least 2 content groups");
  std::mt19937_64 rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);
  const auto n = static_cast<long>(ids.size());
  const long n_train = std::clamp(std::lround(fraction * static_cast<double>(n)), 1L, n - 1);
  SplitPlan p;
  p.seed = seed;
  p.fraction = fraction;
  p.train_ids.insert(ids.begin(), ids.begin() + n_train);
  p.test_ids.insert(ids.begin() + n_train, ids.end());
  return p;
}

struct SplitResult {
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  double srocc = 0.0;
  double lcc = 0.0;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  std::vector<std::string> train_ids;
  std::vector<std::string> test_ids;
  SvrParams selected;
};

struct ProtocolReport {
  std::uint64_t seed = 0;
  std::vector<SplitResult> splits;
  double median_srocc = 0.0;
  double median_lcc = 0.0;
  int failed = 0;
};

inline double median(std::vector<double> v) {
  if (v.empty()) return std::nan("");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline ProtocolReport run_protocol(const Matrix& x, std::span<const double> mos,
                                   std::span<const std::string> content_ids, int n_splits, std::uint64_t seed,
                                   TrainConfig cfg = {}, int jobs = 1) {
  if (x.size() != mos.size() || x.size() != content_ids.size())
    throw Error(ErrorCode::LengthMismatch, "features, mos and content ids differ in length");
  if (n_splits < 1) throw Error(ErrorCode::InvalidArgument, "need at least one split");
  ProtocolReport rep;
  rep.seed = seed;
  rep.splits.resize(static_cast<std::size_t>(n_splits));
  cfg.jobs = 1;

  parallel_for(rep.splits.size(), jobs, [&](std::size_t s) {
    SplitResult& r = rep.splits[s];
    r.seed = seed ^ static_cast<std::uint64_t>(s);
    try {
      const SplitPlan plan = make_split(content_ids, r.seed);
      r.train_ids.assign(plan.train_ids.begin(), plan.train_ids.end());
      r.test_ids.assign(plan.test_ids.begin(), plan.test_ids.end());
      Matrix xtr, xte;
      std::vector<double> ytr, yte;
      std::vector<std::string> gtr;
      for (std::size_t i = 0; i < x.size(); ++i) {
        if (plan.train_ids.count(content_ids[i])) {
          xtr.push_back(x[i]);
          ytr.push_back(mos[i]);
          gtr.push_back(content_ids[i]);
        } else {
          xte.push_back(x[i]);
          yte.push_back(mos[i]);
        }
      }
      r.n_train = xtr.size();
      r.n_test = xte.size();
      TrainConfig split_cfg = cfg;
      split_cfg.seed = r.seed;
      TrainReport tr;
      const SvrModel m = train(xtr, ytr, gtr, split_cfg, &tr);
      r.selected = m.params;
      std::vector<double> pred;
      pred.reserve(xte.size());
      for (const auto& row : xte) pred.push_back(predict(m, row));
      r.srocc = srocc(pred, yte);
      r.lcc = lcc(pred, yte);
      r.ok = true;
    } catch (const Error& e) {
      r.ok = false;
      r.error = std::string(to_string(e.code())) + ": " + e.what();
    }
  });

  std::vector<double> sr, lc;
  for (const auto& r : rep.splits) {
    if (!r.ok) {
      ++rep.failed;
      continue;
    }
    sr.push_back(r.srocc);
    lc.push_back(r.lcc);
  }
  rep.median_srocc = median(sr);
  rep.median_lcc = median(lc);
  return rep;
}

inline nlohmann::ordered_json to_json(const ProtocolReport& rep) {
  nlohmann::ordered_json j;
  j["seed"] = rep.seed;
  j["n_splits"] = rep.splits.size();
  j["failed_splits"] = rep.failed;
  j["median_srocc"] = rep.median_srocc;
  j["median_lcc"] = rep.median_lcc;
  auto& arr = j["splits"] = nlohmann::ordered_json::array();
  for (const auto& r : rep.splits) {
    nlohmann::ordered_json s;
    s["seed"] = r.seed;
    s["ok"] = r.ok;
    if (r.ok) {
      s["srocc"] = r.srocc;
      s["lcc"] = r.lcc;
      s["C"] = r.selected.C;
      s["gamma"] = r.selected.gamma;
      s["epsilon"] = r.selected.epsilon;
    } else {
      s["error"] = r.error;
    }
    s["n_train"] = r.n_train;
    s["n_test"] = r.n_test;
    s["train_ids"] = r.train_ids;
    s["test_ids"] = r.test_ids;
    arr.push_back(std::move(s));
  }
  return j;
}

enum class Ordering { superior = 1, indistinct = 0, inferior = -1 };

inline const char* to_string(Ordering o) {
  switch (o) {
    case Ordering::superior: return "superior";
    case Ordering::inferior: return "inferior";
    default: return "indistinct";
  }
}

struct TTestResult {
  Ordering decision = Ordering::indistinct;
  double t = 0.0;
  double dof = 0.0;
  double p_greater = 1.0;  // H1: mean(a) > mean(b)
  double p_less = 1.0;     // H1: mean(a) < mean(b)
};

// Welch's unequal-variance t statistic, one-sided in each direction at level alpha.
inline TTestResult one_sided_t_test(std::span<const double> a, std::span<const double> b, double alpha = 0.05) {
  if (a.size() < 2 || b.size() < 2) throw Error(ErrorCode::TooFewSamples, "t-test needs >= 2 samples per side");
  const auto moments = [](std::span<const double> x) {
    const double m = detail::mean(x);
    double s = 0.0;
    for (double v : x) s += (v - m) * (v - m);
    return std::pair{m, s / static_cast<double>(x.size() - 1)};
  };
  const auto [ma, va] = moments(a);
  const auto [mb, vb] = moments(b);
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  const double se2 = va / na + vb / nb;
  TTestResult r;
  if (!(se2 > 0.0)) {
    r.t = ma == mb ? 0.0 : std::copysign(INFINITY, ma - mb);
    r.dof = na + nb - 2.0;
    r.p_greater = ma > mb ? 0.0 : 1.0;
    r.p_less = ma < mb ? 0.0 : 1.0;
  } else {
    r.t = (ma - mb) / std::sqrt(se2);
    r.dof = se2 * se2 / ((va / na) * (va / na) / (na - 1.0) + (vb / nb) * (vb / nb) / (nb - 1.0));
    const boost::math::students_t dist(r.dof);
    r.p_greater = boost::math::cdf(boost::math::complement(dist, r.t));
    r.p_less = boost::math::cdf(dist, r.t);
  }
  if (r.p_greater < alpha) r.decision = Ordering::superior;
  else if (r.p_less < alpha) r.decision = Ordering::inferior;
  return r;
}

// Entry (i, j) is +1 when population i is significantly better than j, -1 when worse, 0 otherwise.
inline std::vector<std::vector<int>> decision_matrix(const std::vector<std::vector<double>>& populations,
                                                     double alpha = 0.05) {
  const std::size_t n = populations.size();
  std::vector<std::vector<int>> m(n, std::vector<int>(n, 0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j) m[i][j] = static_cast<int>(one_sided_t_test(populations[i], populations[j], alpha).decision);
  return m;
}

}  // namespace chipqa
