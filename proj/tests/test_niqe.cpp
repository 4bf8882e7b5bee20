#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "chipqa/distortlab.hpp"
#include "chipqa/niqe.hpp"
#include "support/scenes.hpp"
#include "support/tempdir.hpp"

using namespace chipqa;

namespace {

// Population GGD shape of MSCN(white Gaussian noise) under the 7x7, sigma 7/6 window, from an
// independent scipy computation on 2048x2048 fields (three seeds: 2.952-2.956). The normaliser
// bounds |MSCN| by 1/sqrt(w00), so the shape sits well above the Gaussian value 2.
constexpr double kNoiseMscnAlpha = 2.954;
// Same, after the 5-tap sigma 1 low-pass and 2:1 decimation (4096x4096 field, seeds 0-2: 2.756-2.764).
constexpr double kHalfNoiseMscnAlpha = 2.76;

Frame noise_frame(int w, int h, std::uint64_t seed, double sigma = 20.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(128.0, sigma);
  Frame f{Image(w, h), 0, 8};
  for (double& v : f.luma.storage()) v = g(rng);
  return f;
}

Frame natural_still(int w, int h, std::uint64_t seed) {
  Image img = scenes::dead_leaves(w, h, seed);
  std::mt19937_64 rng(seed + 1000);
  std::normal_distribution<double> g(0.0, 0.5);
  for (double& v : img.storage()) v = std::clamp(std::round(v + g(rng)), 0.0, 255.0);
  return scenes::as_frame(std::move(img));
}

template <typename Fn>
ErrorCode code_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::IoError;
}

const PristineModel& natural_model() {
  static const PristineModel m = [] {
    std::vector<Frame> corpus;
    for (int i = 0; i < 40; ++i) corpus.push_back(natural_still(256, 256, 500 + i));
    return fit_pristine(corpus, 32);
  }();
  return m;
}

}  // namespace

TEST(NiqePatchTest, FlatFrameSelectsNothing) {
  EXPECT_EQ(code_of([] { niqe_patch_features(Frame{Image(200, 200, 90.0), 0, 8}, 96); }), ErrorCode::NoPatchSelected);
}

TEST(NiqePatchTest, TooSmall) {
  EXPECT_EQ(code_of([] { niqe_patch_features(noise_frame(150, 300, 1), 96); }), ErrorCode::FrameTooSmall);
}

TEST(NiqePatchTest, NoiseFrameShape) {
  const auto sel = niqe_patch_features(noise_frame(384, 288, 2), 96);
  ASSERT_FALSE(sel.features.empty());
  for (const auto& f : sel.features) {
    EXPECT_EQ(f.size(), 36u);
    EXPECT_NEAR(f[0], kNoiseMscnAlpha, 0.1 * kNoiseMscnAlpha);
  }
}

TEST(NiqePatchTest, SelectionFollowsSharpness) {
  // Texture in the top-left patch only.
  Frame f{Image(64, 64, 100.0), 0, 8};
  const auto n = noise_frame(32, 32, 3);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) f.luma(y, x) = n.luma(y, x);
  const auto sel = niqe_patch_features(f, 32);
  ASSERT_EQ(sel.positions.size(), 1u);
  EXPECT_EQ(sel.positions[0], std::make_pair(0, 0));
}

TEST(NiqePatchTest, Deterministic) {
  const auto f = natural_still(200, 200, 4);
  const auto a = niqe_patch_features(f, 32), b = niqe_patch_features(f, 32);
  EXPECT_EQ(a.features, b.features);
}

TEST(FitPristineTest, TooFewFrames) {
  std::vector<Frame> corpus(5, noise_frame(64, 64, 5));
  EXPECT_EQ(code_of([&] { fit_pristine(corpus, 32); }), ErrorCode::InsufficientCorpus);
}

TEST(FitPristineTest, TooFewPatches) {
  std::vector<Frame> corpus(10, noise_frame(64, 64, 5));
  EXPECT_EQ(code_of([&] { fit_pristine(corpus, 32); }), ErrorCode::InsufficientCorpus);
}

TEST(FitPristineTest, IdenticalFramesGiveZeroCovariance) {
  Frame f{Image(64, 64, 100.0), 0, 8};
  const auto n = noise_frame(32, 32, 6);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) f.luma(y, x) = n.luma(y, x);
  std::vector<Frame> corpus(500, f);
  const auto m = fit_pristine(corpus, 32);
  EXPECT_LT(m.covariance.cwiseAbs().maxCoeff(), 1e-10);
}

TEST(FitPristineTest, NoiseCorpusShapeMeans) {
  std::vector<Frame> corpus;
  for (int i = 0; i < 10; ++i) corpus.push_back(noise_frame(256, 256, 10 + i));
  const auto m = fit_pristine(corpus, 32);
  EXPECT_NEAR(m.mean[0], kNoiseMscnAlpha, 0.1 * kNoiseMscnAlpha);
  EXPECT_NEAR(m.mean[kScaleBlockCount], kHalfNoiseMscnAlpha, 0.1 * kHalfNoiseMscnAlpha);
  EXPECT_EQ(m.patch_size, 32);
}

TEST(FitPristineTest, CovarianceMatchesTwoPass) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<NiqePatchFeatures> rows(57);
  for (auto& r : rows)
    for (double& v : r) v = 3.0 + g(rng);
  const auto est = sample_gaussian(rows);
  for (int i = 0; i < kNiqeFeatureCount; ++i) {
    double mi = 0.0;
    for (const auto& r : rows) mi += r[i];
    mi /= rows.size();
    EXPECT_NEAR(est.mean[i], mi, 1e-12);
    for (int j = 0; j < kNiqeFeatureCount; ++j) {
      double mj = 0.0, c = 0.0;
      for (const auto& r : rows) mj += r[j];
      mj /= rows.size();
      for (const auto& r : rows) c += (r[i] - mi) * (r[j] - mj);
      ASSERT_NEAR(est.covariance(i, j), c / (rows.size() - 1), 1e-9);
    }
  }
}

TEST(FitPristineTest, PatchOrderInvariance) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<NiqePatchFeatures> rows(40);
  for (auto& r : rows)
    for (double& v : r) v = g(rng);
  auto shuffled = rows;
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  const auto a = sample_gaussian(rows), b = sample_gaussian(shuffled);
  EXPECT_LT((a.mean - b.mean).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((a.covariance - b.covariance).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(NiqeScoreTest, IdenticalStatisticsScoreZero) {
  const auto& m = natural_model();
  EXPECT_NEAR(niqe_distance(m.mean, m.covariance, m.mean, m.covariance), 0.0, 1e-12);
}

TEST(NiqeScoreTest, Symmetric) {
  const auto& m = natural_model();
  const auto sel = niqe_patch_features(natural_still(256, 256, 9), 32);
  const auto g = sample_gaussian(sel.features);
  const double a = niqe_distance(m.mean, m.covariance, g.mean, g.covariance);
  const double b = niqe_distance(g.mean, g.covariance, m.mean, m.covariance);
  EXPECT_NEAR(a, b, 1e-9 * std::max(1.0, a));
  EXPECT_GT(a, 0.0);
}

TEST(NiqeScoreTest, SingularCovarianceIsFinite) {
  const Eigen::VectorXd mu1 = Eigen::VectorXd::Constant(kNiqeFeatureCount, 1.0);
  const Eigen::VectorXd mu2 = Eigen::VectorXd::Constant(kNiqeFeatureCount, 1.5);
  const Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(kNiqeFeatureCount, kNiqeFeatureCount);
  const double s = niqe_distance(mu1, zero, mu2, zero);
  EXPECT_TRUE(std::isfinite(s));
  Eigen::MatrixXd rank1 = mu1 * mu1.transpose();
  EXPECT_TRUE(std::isfinite(niqe_distance(mu1, rank1, mu2, rank1)));
}

TEST(NiqeScoreTest, ZeroOnlyWhenMeansCoincideInColumnSpace) {
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(kNiqeFeatureCount, kNiqeFeatureCount);
  cov(0, 0) = 2.0;
  Eigen::VectorXd a = Eigen::VectorXd::Zero(kNiqeFeatureCount), b = a;
  b[5] = 3.0;  // difference outside the column space of the pooled covariance
  EXPECT_NEAR(niqe_distance(a, cov, b, cov), 0.0, 1e-12);
  b[0] = 1.0;
  EXPECT_NEAR(niqe_distance(a, cov, b, cov), 1.0 / std::sqrt(2.0), 1e-12);
}

TEST(NiqeScoreTest, BlurRaisesScore) {
  const auto& m = natural_model();
  int ordered = 0;
  const int trials = 20;
  for (int i = 0; i < trials; ++i) {
    const Frame f = natural_still(256, 256, 900 + i);
    Frame blurred = f;
    blurred.luma = detail::gaussian_blur_reflect(f.luma, 5.0);
    if (niqe_score(f, m) < niqe_score(blurred, m)) ++ordered;
  }
  EXPECT_GE(ordered, 18);
}

TEST(SpatialBlockTest, LengthAndNoiseVsBlur) {
  // Low-amplitude noise; at sigma >= 20 the blurred field sits closer to the natural model.
  const auto& m = natural_model();
  int ordered = 0;
  for (int i = 0; i < 20; ++i) {
    const Frame f = noise_frame(256, 256, 100 + i, 5.0);
    Frame blurred = f;
    blurred.luma = detail::gaussian_blur_reflect(f.luma, 5.0);
    const auto a = spatial_block(f, m), b = spatial_block(blurred, m);
    ASSERT_EQ(a.features.size(), 37u);
    EXPECT_FALSE(a.degenerate);
    EXPECT_GE(a.features[36], 0.0);
    if (b.features[36] > a.features[36]) ++ordered;
  }
  EXPECT_GE(ordered, 18);
}

TEST(SpatialBlockTest, FlatFrameFallsBack) {
  const auto b = spatial_block(Frame{Image(256, 256, 77.0), 0, 8}, natural_model());
  EXPECT_TRUE(b.degenerate);
  for (double v : b.features) EXPECT_EQ(v, 0.0);
}

TEST(SpatialBlockTest, MeanOfSelectedPatches) {
  const auto& m = natural_model();
  const Frame f = natural_still(256, 256, 12);
  const auto b = spatial_block(f, m);
  const auto sel = niqe_patch_features(f, 32);
  for (int j = 0; j < kNiqeFeatureCount; ++j) {
    double s = 0.0;
    for (const auto& p : sel.features) s += p[j];
    EXPECT_NEAR(b.features[j], s / sel.features.size(), 1e-9 * std::max(1.0, std::abs(s)));
  }
  EXPECT_NEAR(b.features[36], niqe_score(f, m), 1e-12);
}

TEST(PristineFileTest, RoundTripAndCorruption) {
  testutil::TempDir dir;
  const auto& m = natural_model();
  save_pristine(dir.file("m.niqm"), m);
  const auto bytes = testutil::read_bytes(dir.file("m.niqm"));
  EXPECT_EQ(bytes.size(), 12u + 8u * (36 + 36 * 36));
  const auto back = load_pristine(dir.file("m.niqm"));
  EXPECT_EQ(back.mean, m.mean);
  EXPECT_EQ(back.covariance, m.covariance);
  EXPECT_EQ(back.patch_size, 32);

  auto bad = bytes;
  bad[4] = 9;  // version
  testutil::write_bytes(dir.file("v.niqm"), bad);
  EXPECT_EQ(code_of([&] { load_pristine(dir.file("v.niqm")); }), ErrorCode::CorruptModel);
  testutil::write_bytes(dir.file("t.niqm"), {bytes.begin(), bytes.begin() + 100});
  EXPECT_EQ(code_of([&] { load_pristine(dir.file("t.niqm")); }), ErrorCode::CorruptModel);
  EXPECT_EQ(code_of([&] { load_pristine(dir.file("missing.niqm")); }), ErrorCode::IoError);
}
