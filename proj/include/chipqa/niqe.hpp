#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "chipqa/core.hpp"
#include "chipqa/nvs.hpp"
#include "chipqa/spatialops.hpp"
#include "chipqa/videoio.hpp"

namespace chipqa {

inline constexpr int kNiqeFeatureCount = 36;
inline constexpr int kSpatialBlockCount = 37;
inline constexpr double kSharpnessThreshold = 0.75;
inline constexpr int kDefaultNiqePatch = 96;

using NiqePatchFeatures = std::array<double, kNiqeFeatureCount>;

struct PristineModel {
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(kNiqeFeatureCount);
  Eigen::MatrixXd covariance = Eigen::MatrixXd::Zero(kNiqeFeatureCount, kNiqeFeatureCount);
  int patch_size = kDefaultNiqePatch;
  double sharpness_threshold = kSharpnessThreshold;
};

// Full- and half-scale MSCN fields plus the full-scale local deviation used for patch selection.
struct SpatialInputs {
  Image mscn_full;
  Image sigma_full;
  Image mscn_half;
};

inline SpatialInputs spatial_inputs(const Frame& f, const GaussianWindow& win, double c) {
  const auto m1 = local_moments(f.luma, win);
  const Frame half = downsample2(f);
  return {mscn_from_moments(f.luma, m1, c).values, m1.sigma.values, mscn(half.luma, win, c).values};
}

namespace detail {

inline Image crop(const Image& img, int x0, int y0, int w, int h) {
  Image out(w, h);
  for (int y = 0; y < h; ++y) std::copy_n(img.row(y0 + y) + x0, w, out.row(y));
  return out;
}

// (alpha, sigma^2, then eta, nu, sl^2, sr^2 for H, V, D1, D2) for one patch.
inline bool patch_block(const Image& patch, double* out) { return fit_scale_block(patch, out, out + 2); }

}  // namespace detail

struct PatchSelection {
  std::vector<NiqePatchFeatures> features;
  std::vector<std::pair<int, int>> positions;  // (patch_row, patch_col)
};

inline PatchSelection niqe_patch_features(const SpatialInputs& in, int patch_size,
                                          double threshold = kSharpnessThreshold) {
  const int w = in.mscn_full.width(), h = in.mscn_full.height();
  if (patch_size < 2) throw Error(ErrorCode::InvalidArgument, "NIQE patch size must be >= 2");
  if (w < 2 * patch_size || h < 2 * patch_size)
    throw Error(ErrorCode::FrameTooSmall, "NIQE needs frames of at least " + std::to_string(2 * patch_size) +
                                              " px per side for patch size " + std::to_string(patch_size));
  const int rows = h / patch_size, cols = w / patch_size;
  std::vector<double> sharp(static_cast<std::size_t>(rows) * cols, 0.0);
  double max_sharp = 0.0;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      double s = 0.0;
      for (int y = r * patch_size; y < (r + 1) * patch_size; ++y) {
        const double* row = in.sigma_full.row(y);
        for (int x = c * patch_size; x < (c + 1) * patch_size; ++x) s += row[x];
      }
      s /= static_cast<double>(patch_size) * patch_size;
      sharp[static_cast<std::size_t>(r) * cols + c] = s;
      max_sharp = std::max(max_sharp, s);
    }
  if (!(max_sharp > 1e-9)) throw Error(ErrorCode::NoPatchSelected, "frame has no structure");

  const int half = patch_size / 2;
  PatchSelection sel;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      if (sharp[static_cast<std::size_t>(r) * cols + c] < threshold * max_sharp) continue;
      NiqePatchFeatures f{};
      detail::patch_block(detail::crop(in.mscn_full, c * patch_size, r * patch_size, patch_size, patch_size),
                          f.data());
      detail::patch_block(detail::crop(in.mscn_half, c * half, r * half, half, half), f.data() + kScaleBlockCount);
      sel.features.push_back(f);
      sel.positions.emplace_back(r, c);
    }
  return sel;
}

inline PatchSelection niqe_patch_features(const Frame& frame, int patch_size,
                                          double threshold = kSharpnessThreshold) {
  const auto win = GaussianWindow::make();
  return niqe_patch_features(spatial_inputs(frame, win, default_mscn_constant(frame.bit_depth)), patch_size,
                             threshold);
}

struct Gaussian36 {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;
};

// Sample mean and (n-1)-normalised covariance; a single observation gives a zero covariance.
inline Gaussian36 sample_gaussian(const std::vector<NiqePatchFeatures>& rows) {
  const int d = kNiqeFeatureCount;
  const auto n = static_cast<Eigen::Index>(rows.size());
  Eigen::MatrixXd x(n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) x(i, j) = rows[static_cast<std::size_t>(i)][j];
  Gaussian36 g;
  g.mean = x.colwise().mean().transpose();
  const Eigen::MatrixXd centered = x.rowwise() - g.mean.transpose();
  g.covariance = n > 1 ? Eigen::MatrixXd((centered.transpose() * centered) / double(n - 1))
                       : Eigen::MatrixXd::Zero(d, d);
  return g;
}

inline PristineModel fit_pristine(const std::vector<Frame>& corpus, int patch_size = kDefaultNiqePatch,
                                  std::size_t min_patches = 500) {
  if (corpus.size() < 10)
    throw Error(ErrorCode::InsufficientCorpus, "need >= 10 frames, got " + std::to_string(corpus.size()));
  std::vector<NiqePatchFeatures> all;
  for (const auto& f : corpus) {
    try {
      auto sel = niqe_patch_features(f, patch_size);
      all.insert(all.end(), sel.features.begin(), sel.features.end());
    } catch (const Error& e) {
      if (e.code() != ErrorCode::NoPatchSelected) throw;
    }
  }
  if (all.size() < min_patches)
    throw Error(ErrorCode::InsufficientCorpus, "only " + std::to_string(all.size()) + " patches selected, need " +
                                                   std::to_string(min_patches));
  const auto g = sample_gaussian(all);
  PristineModel m;
  m.mean = g.mean;
  m.covariance = g.covariance;
  m.patch_size = patch_size;
  return m;
}

// Symmetric PSD pseudo-inverse via eigendecomposition.
inline Eigen::MatrixXd psd_pinv(const Eigen::MatrixXd& a) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (a + a.transpose()));
  const Eigen::VectorXd ev = es.eigenvalues();
  const double tol = std::max(ev.cwiseAbs().maxCoeff(), 1e-300) * a.rows() * 1e-12;
  Eigen::VectorXd inv(ev.size());
  for (Eigen::Index i = 0; i < ev.size(); ++i) inv[i] = ev[i] > tol ? 1.0 / ev[i] : 0.0;
  return es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
}

inline double niqe_distance(const Eigen::VectorXd& mu1, const Eigen::MatrixXd& cov1, const Eigen::VectorXd& mu2,
                            const Eigen::MatrixXd& cov2) {
  const Eigen::VectorXd d = mu1 - mu2;
  const double q = d.dot(psd_pinv(0.5 * (cov1 + cov2)) * d);
  return std::sqrt(std::max(q, 0.0));
}

inline double niqe_score(const std::vector<NiqePatchFeatures>& test_patches, const PristineModel& model) {
  if (test_patches.empty()) throw Error(ErrorCode::NoPatchSelected, "no test patches");
  const auto g = sample_gaussian(test_patches);
  return niqe_distance(model.mean, model.covariance, g.mean, g.covariance);
}

inline double niqe_score(const Frame& frame, const PristineModel& model) {
  return niqe_score(niqe_patch_features(frame, model.patch_size, model.sharpness_threshold).features, model);
}

struct SpatialFeatureBlock {
  std::array<double, kSpatialBlockCount> features{};
  bool degenerate = false;
};

inline SpatialFeatureBlock spatial_block(const SpatialInputs& in, const PristineModel& model) {
  SpatialFeatureBlock b;
  try {
    const auto sel = niqe_patch_features(in, model.patch_size, model.sharpness_threshold);
    const auto g = sample_gaussian(sel.features);
    for (int j = 0; j < kNiqeFeatureCount; ++j) b.features[j] = g.mean[j];
    b.features[kNiqeFeatureCount] = niqe_distance(model.mean, model.covariance, g.mean, g.covariance);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::NoPatchSelected && e.code() != ErrorCode::FrameTooSmall) throw;
    b.features.fill(0.0);
    b.degenerate = true;
  }
  return b;
}

inline SpatialFeatureBlock spatial_block(const Frame& frame, const PristineModel& model) {
  const auto win = GaussianWindow::make();
  return spatial_block(spatial_inputs(frame, win, default_mscn_constant(frame.bit_depth)), model);
}

// "NIQM", u32 version, u32 patch_size, 36 f64 means, 1296 f64 covariance (row-major).
inline constexpr std::uint32_t kPristineVersion = 1;

inline void save_pristine(const std::string& path, const PristineModel& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot create '" + path + "'");
  const std::uint32_t version = kPristineVersion, patch = static_cast<std::uint32_t>(m.patch_size);
  out.write("NIQM", 4);
  out.write(reinterpret_cast<const char*>(&version), 4);
  out.write(reinterpret_cast<const char*>(&patch), 4);
  for (int i = 0; i < kNiqeFeatureCount; ++i) out.write(reinterpret_cast<const char*>(&m.mean[i]), 8);
  for (int r = 0; r < kNiqeFeatureCount; ++r)
    for (int c = 0; c < kNiqeFeatureCount; ++c) {
      const double v = m.covariance(r, c);
      out.write(reinterpret_cast<const char*>(&v), 8);
    }
  if (!out) throw Error(ErrorCode::IoError, "write failed for '" + path + "'");
}

inline PristineModel load_pristine(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open '" + path + "'");
  char magic[4] = {};
  std::uint32_t version = 0, patch = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&version), 4);
  in.read(reinterpret_cast<char*>(&patch), 4);
  if (!in || std::string(magic, 4) != "NIQM") throw Error(ErrorCode::CorruptModel, path + ": not a NIQM file");
  if (version != kPristineVersion)
    throw Error(ErrorCode::CorruptModel, path + ": unsupported NIQM version " + std::to_string(version));
  PristineModel m;
  m.patch_size = static_cast<int>(patch);
  for (int i = 0; i < kNiqeFeatureCount; ++i) in.read(reinterpret_cast<char*>(&m.mean[i]), 8);
  for (int r = 0; r < kNiqeFeatureCount; ++r)
    for (int c = 0; c < kNiqeFeatureCount; ++c) in.read(reinterpret_cast<char*>(&m.covariance(r, c)), 8);
  if (!in) throw Error(ErrorCode::CorruptModel, path + ": truncated NIQM file");
  return m;
}

}  // namespace chipqa
