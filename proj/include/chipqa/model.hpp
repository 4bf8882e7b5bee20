#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <zlib.h>

#include "chipqa/core.hpp"
#include "chipqa/stats.hpp"

namespace chipqa {

using Matrix = std::vector<std::vector<double>>;

enum class Kernel : std::uint32_t { rbf = 0, linear = 1 };

struct SvrParams {
  Kernel kernel = Kernel::rbf;
  double C = 1.0;
  double gamma = 0.1;
  double epsilon = 0.1;
  double tolerance = 1e-3;
  long max_iterations = 100000;
};

// Maps each dimension's training range onto [-1, 1]; zero-range dimensions map to 0.
struct MinMaxScaler {
  std::vector<double> lo;
  std::vector<double> hi;

  static MinMaxScaler fit(const Matrix& x) {
    if (x.empty()) throw Error(ErrorCode::TooFewSamples, "cannot fit a scaler on no rows");
    MinMaxScaler s{x[0], x[0]};
    for (const auto& row : x) {
      if (row.size() != s.lo.size()) throw Error(ErrorCode::DimensionMismatch, "ragged feature matrix");
      for (std::size_t j = 0; j < row.size(); ++j) {
        s.lo[j] = std::min(s.lo[j], row[j]);
        s.hi[j] = std::max(s.hi[j], row[j]);
      }
    }
    return s;
  }

  std::size_t dim() const { return lo.size(); }

  std::vector<double> transform(std::span<const double> x) const {
    if (x.size() != lo.size())
      throw Error(ErrorCode::DimensionMismatch, "expected " + std::to_string(lo.size()) + " features, got " +
                                                    std::to_string(x.size()));
    std::vector<double> out(x.size());
    for (std::size_t j = 0; j < x.size(); ++j) {
      const double range = hi[j] - lo[j];
      out[j] = range > 0.0 ? 2.0 * (x[j] - lo[j]) / range - 1.0 : 0.0;
    }
    return out;
  }

  Matrix transform(const Matrix& x) const {
    Matrix out;
    out.reserve(x.size());
    for (const auto& r : x) out.push_back(transform(r));
    return out;
  }
};

inline double kernel_value(const SvrParams& p, std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  if (p.kernel == Kernel::linear) {
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return std::exp(-p.gamma * acc);
}

struct SvrModel {
  SvrParams params;
  MinMaxScaler scaler;
  Matrix support_vectors;  // in scaled feature space
  std::vector<double> dual_coefs;
  double bias = 0.0;

  std::size_t dim() const { return scaler.dim(); }

  // Decision function on an already scaled vector.
  double decision(std::span<const double> z) const {
    double f = bias;
    for (std::size_t i = 0; i < support_vectors.size(); ++i)
      f += dual_coefs[i] * kernel_value(params, support_vectors[i], z);
    return f;
  }
};

inline double predict(const SvrModel& m, std::span<const double> x) { return m.decision(m.scaler.transform(x)); }

struct SolverStats {
  long iterations = 0;
  bool converged = false;
  double kkt_gap = 0.0;
  std::vector<double> dual_objective;  // negated minimisation objective per iteration, if traced
};

namespace detail {

// Epsilon-SVR dual in the 2l-variable form, solved by SMO with second-order working-set selection.
class SmoSolver {
 public:
  SmoSolver(const Matrix& x, std::span<const double> y, const SvrParams& p, bool trace)
      : p_(p), l_(static_cast<int>(x.size())), trace_(trace) {
    const int n = 2 * l_;
    kernel_.assign(static_cast<std::size_t>(l_) * l_, 0.0);
    for (int i = 0; i < l_; ++i)
      for (int j = i; j < l_; ++j)
        kernel_[static_cast<std::size_t>(i) * l_ + j] = kernel_[static_cast<std::size_t>(j) * l_ + i] =
            kernel_value(p, x[i], x[j]);
    sign_.resize(n);
    lin_.resize(n);
    for (int i = 0; i < l_; ++i) {
      sign_[i] = 1;
      sign_[i + l_] = -1;
      lin_[i] = p.epsilon - y[i];
      lin_[i + l_] = p.epsilon + y[i];
    }
    alpha_.assign(n, 0.0);
    grad_ = lin_;
  }

  SolverStats run() {
    SolverStats st;
    for (;;) {
      int i = -1, j = -1;
      const double gap = select(i, j);
      st.kkt_gap = gap;
      if (gap < p_.tolerance || j == -1) {
        st.converged = true;
        break;
      }
      if (st.iterations >= p_.max_iterations) break;
      step(i, j);
      ++st.iterations;
      if (trace_) st.dual_objective.push_back(-objective());
    }
    return st;
  }

  std::vector<double> coefficients() const {
    std::vector<double> c(l_);
    for (int i = 0; i < l_; ++i) c[i] = alpha_[i] - alpha_[i + l_];
    return c;
  }

  double rho() const {
    double ub = std::numeric_limits<double>::infinity(), lb = -ub, sum_free = 0.0;
    int n_free = 0;
    for (int t = 0; t < 2 * l_; ++t) {
      const double yg = sign_[t] * grad_[t];
      if (at_upper(t)) {
        if (sign_[t] == -1) ub = std::min(ub, yg);
        else lb = std::max(lb, yg);
      } else if (at_lower(t)) {
        if (sign_[t] == 1) ub = std::min(ub, yg);
        else lb = std::max(lb, yg);
      } else {
        ++n_free;
        sum_free += yg;
      }
    }
    return n_free > 0 ? sum_free / n_free : 0.5 * (ub + lb);
  }

  double objective() const {
    double v = 0.0;
    for (int t = 0; t < 2 * l_; ++t) v += alpha_[t] * (grad_[t] + lin_[t]);
    return 0.5 * v;
  }

 private:
  static constexpr double kTau = 1e-12;

  double k(int t, int s) const {
    return kernel_[static_cast<std::size_t>(t % l_) * l_ + (s % l_)];
  }
  double q(int t, int s) const { return sign_[t] * sign_[s] * k(t, s); }
  bool at_upper(int t) const { return alpha_[t] >= p_.C; }
  bool at_lower(int t) const { return alpha_[t] <= 0.0; }

  // Returns the maximal violating-pair gap and the chosen pair.
  double select(int& out_i, int& out_j) const {
    const int n = 2 * l_;
    double gmax = -std::numeric_limits<double>::infinity(), gmax2 = gmax;
    int gi = -1;
    for (int t = 0; t < n; ++t) {
      if (sign_[t] == 1) {
        if (!at_upper(t) && -grad_[t] >= gmax) gmax = -grad_[t], gi = t;
      } else {
        if (!at_lower(t) && grad_[t] >= gmax) gmax = grad_[t], gi = t;
      }
    }
    int gj = -1;
    double best = std::numeric_limits<double>::infinity();
    for (int t = 0; t < n && gi != -1; ++t) {
      double diff = 0.0, quad = 0.0;
      if (sign_[t] == 1) {
        if (at_lower(t)) continue;
        diff = gmax + grad_[t];
        gmax2 = std::max(gmax2, grad_[t]);
        quad = k(gi, gi) + k(t, t) - 2.0 * sign_[gi] * q(gi, t);
      } else {
        if (at_upper(t)) continue;
        diff = gmax - grad_[t];
        gmax2 = std::max(gmax2, -grad_[t]);
        quad = k(gi, gi) + k(t, t) + 2.0 * sign_[gi] * q(gi, t);
      }
      if (diff > 0.0) {
        const double obj = -(diff * diff) / (quad > 0.0 ? quad : kTau);
        if (obj <= best) best = obj, gj = t;
      }
    }
    out_i = gi;
    out_j = gj;
    return gmax + gmax2;
  }

  void step(int i, int j) {
    const double C = p_.C;
    const double old_i = alpha_[i], old_j = alpha_[j];
    const double qij = q(i, j);
    if (sign_[i] != sign_[j]) {
      double quad = k(i, i) + k(j, j) + 2.0 * qij;
      if (quad <= 0.0) quad = kTau;
      const double delta = (-grad_[i] - grad_[j]) / quad;
      const double diff = alpha_[i] - alpha_[j];
      alpha_[i] += delta;
      alpha_[j] += delta;
      if (diff > 0.0) {
        if (alpha_[j] < 0.0) alpha_[j] = 0.0, alpha_[i] = diff;
      } else if (alpha_[i] < 0.0) {
        alpha_[i] = 0.0, alpha_[j] = -diff;
      }
      if (diff > 0.0) {
        if (alpha_[i] > C) alpha_[i] = C, alpha_[j] = C - diff;
      } else if (alpha_[j] > C) {
        alpha_[j] = C, alpha_[i] = C + diff;
      }
    } else {
      double quad = k(i, i) + k(j, j) - 2.0 * qij;
      if (quad <= 0.0) quad = kTau;
      const double delta = (grad_[i] - grad_[j]) / quad;
      const double sum = alpha_[i] + alpha_[j];
      alpha_[i] -= delta;
      alpha_[j] += delta;
      if (sum > C) {
        if (alpha_[i] > C) alpha_[i] = C, alpha_[j] = sum - C;
      } else if (alpha_[j] < 0.0) {
        alpha_[j] = 0.0, alpha_[i] = sum;
      }
      if (sum > C) {
        if (alpha_[j] > C) alpha_[j] = C, alpha_[i] = sum - C;
      } else if (alpha_[i] < 0.0) {
        alpha_[i] = 0.0, alpha_[j] = sum;
      }
    }
    const double di = alpha_[i] - old_i, dj = alpha_[j] - old_j;
    for (int t = 0; t < 2 * l_; ++t) grad_[t] += q(i, t) * di + q(j, t) * dj;
  }

  SvrParams p_;
  int l_;
  bool trace_;
  std::vector<double> kernel_;
  std::vector<int> sign_;
  std::vector<double> lin_;
  std::vector<double> alpha_;
  std::vector<double> grad_;
};

}  // namespace detail

// Fits on rows that are already scaled; the scaler slot is left empty.
inline SvrModel fit_svr(const Matrix& z, std::span<const double> y, const SvrParams& p, SolverStats* stats = nullptr,
                        bool trace = false) {
  if (z.empty() || z.size() != y.size()) throw Error(ErrorCode::LengthMismatch, "X and y differ in length");
  if (!(p.C > 0.0) || p.epsilon < 0.0 || (p.kernel == Kernel::rbf && !(p.gamma > 0.0)))
    throw Error(ErrorCode::InvalidArgument, "SVR needs C > 0, epsilon >= 0, gamma > 0");
  detail::SmoSolver solver(z, y, p, trace);
  SolverStats st = solver.run();
  if (!st.converged)
    throw Error(ErrorCode::NotConverged, "SMO hit the iteration cap (" + std::to_string(p.max_iterations) +
                                             ") with KKT gap " + std::to_string(st.kkt_gap));
  SvrModel m;
  m.params = p;
  const auto coef = solver.coefficients();
  for (std::size_t i = 0; i < coef.size(); ++i)
    if (coef[i] != 0.0) {
      m.support_vectors.push_back(z[i]);
      m.dual_coefs.push_back(coef[i]);
    }
  m.bias = -solver.rho();
  if (stats) *stats = std::move(st);
  return m;
}

inline SvrModel fit_svr_scaled(const Matrix& x, std::span<const double> y, const SvrParams& p,
                               SolverStats* stats = nullptr) {
  const auto scaler = MinMaxScaler::fit(x);
  SvrModel m = fit_svr(scaler.transform(x), y, p, stats);
  m.scaler = scaler;
  return m;
}

struct TrainConfig {
  std::vector<double> c_grid{0.1, 1, 10, 100, 1000};
  std::vector<double> gamma_grid{1.0 / 256, 1.0 / 128, 1.0 / 64, 1.0 / 32, 1.0 / 16, 1.0 / 8, 1.0 / 4, 1.0 / 2, 1.0};
  std::vector<double> epsilon_grid{0.1, 0.5, 1.0};
  Kernel kernel = Kernel::rbf;
  int folds = 5;
  std::uint64_t seed = 0;
  int jobs = 1;
};

// Assigns each distinct group to a fold: groups are sorted, shuffled with `seed`, then dealt round-robin.
inline std::vector<int> group_folds(std::span<const std::string> groups, int folds, std::uint64_t seed) {
  std::vector<std::string> uniq(groups.begin(), groups.end());
  std::sort(uniq.begin(), uniq.end());
  uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
  if (static_cast<int>(uniq.size()) < folds)
    throw Error(ErrorCode::TooFewGroups, std::to_string(uniq.size()) + " content groups for " + std::to_string(folds) +
                                             " folds");
  std::mt19937_64 rng(seed);
  std::shuffle(uniq.begin(), uniq.end(), rng);
  std::map<std::string, int> fold_of;
  for (std::size_t i = 0; i < uniq.size(); ++i) fold_of[uniq[i]] = static_cast<int>(i % folds);
  std::vector<int> out;
  out.reserve(groups.size());
  for (const auto& g : groups) out.push_back(fold_of.at(g));
  return out;
}

struct GridResult {
  SvrParams params;
  double mean_srocc = 0.0;
};

struct TrainReport {
  std::vector<GridResult> grid;
  std::size_t best = 0;
};

inline SvrModel train(const Matrix& x, std::span<const double> y, std::span<const std::string> groups,
                      const TrainConfig& cfg, TrainReport* report = nullptr) {
  if (x.size() != y.size() || x.size() != groups.size())
    throw Error(ErrorCode::LengthMismatch, "X, y and groups differ in length");
  if (x.size() < 10) throw Error(ErrorCode::TooFewSamples, "need >= 10 samples, got " + std::to_string(x.size()));
  if (cfg.folds < 2) throw Error(ErrorCode::InvalidArgument, "folds must be >= 2");
  if (cfg.c_grid.empty() || cfg.epsilon_grid.empty() || (cfg.kernel == Kernel::rbf && cfg.gamma_grid.empty()))
    throw Error(ErrorCode::InvalidArgument, "empty hyperparameter grid");
  const auto fold = group_folds(groups, cfg.folds, cfg.seed);

  struct FoldData {
    Matrix train_z, val_z;
    std::vector<double> train_y, val_y;
  };
  std::vector<FoldData> data(static_cast<std::size_t>(cfg.folds));
  for (int f = 0; f < cfg.folds; ++f) {
    Matrix tr;
    std::set<std::string> train_groups, val_groups;
    for (std::size_t i = 0; i < x.size(); ++i)
      if (fold[i] != f) tr.push_back(x[i]), data[f].train_y.push_back(y[i]), train_groups.insert(groups[i]);
    const auto scaler = MinMaxScaler::fit(tr);
    data[f].train_z = scaler.transform(tr);
    for (std::size_t i = 0; i < x.size(); ++i)
      if (fold[i] == f) {
        data[f].val_z.push_back(scaler.transform(x[i]));
        data[f].val_y.push_back(y[i]);
        val_groups.insert(groups[i]);
      }
    for (const auto& g : val_groups)
      if (train_groups.count(g)) throw Error(ErrorCode::InvalidArgument, "content group '" + g + "' leaked across a fold");
  }

  std::vector<SvrParams> points;
  const std::vector<double> gammas = cfg.kernel == Kernel::rbf ? cfg.gamma_grid : std::vector<double>{1.0};
  for (double c : cfg.c_grid)
    for (double g : gammas)
      for (double e : cfg.epsilon_grid) {
        SvrParams p;
        p.kernel = cfg.kernel;
        p.C = c;
        p.gamma = g;
        p.epsilon = e;
        points.push_back(p);
      }

  std::vector<GridResult> results(points.size());
  parallel_for(points.size(), cfg.jobs, [&](std::size_t gi) {
    double total = 0.0;
    for (int f = 0; f < cfg.folds; ++f) {
      double s = 0.0;
      try {
        const SvrModel m = fit_svr(data[f].train_z, data[f].train_y, points[gi]);
        std::vector<double> pred;
        pred.reserve(data[f].val_z.size());
        for (const auto& z : data[f].val_z) pred.push_back(m.decision(z));
        s = srocc(pred, data[f].val_y);
      } catch (const Error&) {
        s = 0.0;  // constant predictions or a non-converged fit score as uninformative
      }
      total += s;
    }
    results[gi] = {points[gi], total / cfg.folds};
  });

  std::size_t best = 0;
  for (std::size_t i = 1; i < results.size(); ++i)
    if (results[i].mean_srocc > results[best].mean_srocc) best = i;
  if (report) *report = {results, best};
  return fit_svr_scaled(x, y, results[best].params);
}

// "CQAM" | u32 version | u32 kernel | f64 C, gamma, epsilon, bias | u32 dim | u32 n_sv |
// f64 scaler lo[dim], hi[dim] | f64 sv[n_sv][dim] | f64 duals[n_sv] | u32 crc32 of all preceding bytes.
inline constexpr std::uint32_t kModelVersion = 1;

namespace detail {

class ByteWriter {
 public:
  template <typename T>
  void put(const T& v) {
    const auto* p = reinterpret_cast<const unsigned char*>(&v);
    bytes.insert(bytes.end(), p, p + sizeof(T));
  }
  std::vector<unsigned char> bytes;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const unsigned char> b) : b_(b) {}
  template <typename T>
  T get() {
    if (pos_ + sizeof(T) > b_.size()) throw Error(ErrorCode::CorruptModel, "model file truncated");
    T v;
    std::memcpy(&v, b_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::size_t pos() const { return pos_; }

 private:
  std::span<const unsigned char> b_;
  std::size_t pos_ = 0;
};

inline std::uint32_t crc32_of(std::span<const unsigned char> b) {
  return static_cast<std::uint32_t>(::crc32(0L, b.data(), static_cast<uInt>(b.size())));
}

}  // namespace detail

inline std::vector<unsigned char> serialize_model(const SvrModel& m) {
  detail::ByteWriter w;
  w.bytes = {'C', 'Q', 'A', 'M'};
  w.put(kModelVersion);
  w.put(static_cast<std::uint32_t>(m.params.kernel));
  w.put(m.params.C);
  w.put(m.params.gamma);
  w.put(m.params.epsilon);
  w.put(m.bias);
  w.put(static_cast<std::uint32_t>(m.dim()));
  w.put(static_cast<std::uint32_t>(m.support_vectors.size()));
  for (double v : m.scaler.lo) w.put(v);
  for (double v : m.scaler.hi) w.put(v);
  for (const auto& sv : m.support_vectors)
    for (double v : sv) w.put(v);
  for (double v : m.dual_coefs) w.put(v);
  w.put(detail::crc32_of(w.bytes));
  return w.bytes;
}

inline SvrModel deserialize_model(std::span<const unsigned char> bytes) {
  if (bytes.size() < 8 || std::string(bytes.begin(), bytes.begin() + 4) != "CQAM")
    throw Error(ErrorCode::CorruptModel, "not a CQAM model");
  detail::ByteReader r(bytes);
  r.get<std::uint32_t>();  // magic
  const auto version = r.get<std::uint32_t>();
  if (version != kModelVersion)
    throw Error(ErrorCode::CorruptModel, "model version " + std::to_string(version) + ", expected " +
                                             std::to_string(kModelVersion));
  SvrModel m;
  const auto kernel = r.get<std::uint32_t>();
  if (kernel > 1) throw Error(ErrorCode::CorruptModel, "unknown kernel id " + std::to_string(kernel));
  m.params.kernel = static_cast<Kernel>(kernel);
  m.params.C = r.get<double>();
  m.params.gamma = r.get<double>();
  m.params.epsilon = r.get<double>();
  m.bias = r.get<double>();
  const auto dim = r.get<std::uint32_t>();
  const auto n_sv = r.get<std::uint32_t>();
  const std::size_t need = r.pos() + 8ull * (2ull * dim + static_cast<std::size_t>(n_sv) * dim + n_sv) + 4;
  if (bytes.size() != need) throw Error(ErrorCode::CorruptModel, "model size does not match its header");
  const std::uint32_t stored = [&] {
    std::uint32_t c;
    std::memcpy(&c, bytes.data() + bytes.size() - 4, 4);
    return c;
  }();
  if (stored != detail::crc32_of(bytes.first(bytes.size() - 4))) throw Error(ErrorCode::CorruptModel, "checksum mismatch");
  m.scaler.lo.resize(dim);
  m.scaler.hi.resize(dim);
  for (auto& v : m.scaler.lo) v = r.get<double>();
  for (auto& v : m.scaler.hi) v = r.get<double>();
  m.support_vectors.assign(n_sv, std::vector<double>(dim));
  for (auto& sv : m.support_vectors)
    for (auto& v : sv) v = r.get<double>();
  m.dual_coefs.resize(n_sv);
  for (auto& v : m.dual_coefs) v = r.get<double>();
  return m;
}

inline void save_model(const std::string& path, const SvrModel& m) {
  const auto bytes = serialize_model(m);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot create '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::IoError, "write failed for '" + path + "'");
}

inline SvrModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open '" + path + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_model(bytes);
}

}  // namespace chipqa
