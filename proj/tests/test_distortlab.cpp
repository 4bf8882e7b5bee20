#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "chipqa/distortlab.hpp"
#include "chipqa/nvs.hpp"
#include "chipqa/spatialops.hpp"
#include "support/scenes.hpp"

using namespace chipqa;

namespace {

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

// Each frame is a distinct constant so provenance can be read back from any pixel.
std::vector<Frame> tagged(int n, int w = 16, int h = 16) {
  std::vector<Frame> v;
  for (int t = 0; t < n; ++t) v.push_back(Frame{Image(w, h, 10.0 + 20.0 * t), t, 8});
  return v;
}

int tag_of(const Frame& f, int y = 0) { return static_cast<int>(std::lround((f.luma(y, 0) - 10.0) / 20.0)); }

std::vector<Frame> clip(int frames = 8) {
  scenes::ClipParams p;
  p.width = 64;
  p.height = 64;
  p.frames = frames;
  return scenes::natural_clip(p);
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

}  // namespace

TEST(DistortTest, SeverityRange) {
  const auto f = tagged(6);
  EXPECT_EQ(code_of([&] { apply({DistortionKind::blur, 0, 1}, f); }), ErrorCode::InvalidArgument);
  EXPECT_EQ(code_of([&] { apply({DistortionKind::blur, 6, 1}, f); }), ErrorCode::InvalidArgument);
  EXPECT_EQ(code_of([&] { apply({DistortionKind::judder, 1, 1}, tagged(4)); }), ErrorCode::TooShort);
}

TEST(DistortTest, KindNames) {
  for (auto k : kAllDistortions) EXPECT_EQ(parse_distortion(to_string(k)), k);
  EXPECT_EQ(code_of([] { parse_distortion("aliasing"); }), ErrorCode::InvalidArgument);
}

TEST(DistortTest, LengthAndDeterminism) {
  const auto f = clip();
  for (auto k : kAllDistortions)
    for (int s = 1; s <= 5; ++s) {
      const auto a = apply({k, s, 42}, f), b = apply({k, s, 42}, f);
      ASSERT_EQ(a.size(), f.size());
      for (std::size_t t = 0; t < a.size(); ++t) {
        ASSERT_EQ(a[t].luma.storage(), b[t].luma.storage()) << to_string(k) << s;
        EXPECT_EQ(a[t].index, static_cast<int>(t));
      }
    }
}

TEST(DistortTest, FrameDropHoldsLastFrame) {
  int runs_seen = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto out = apply({DistortionKind::frame_drop, 2, seed}, tagged(10));
    ASSERT_EQ(out.size(), 10u);
    EXPECT_EQ(tag_of(out[0]), 0);
    for (int t = 0; t < 10;) {
      const int src = tag_of(out[t]);
      if (src == t) {
        ++t;
        continue;
      }
      // A drop: the previous slot's frame is held for `severity` slots (or until the end).
      ++runs_seen;
      EXPECT_EQ(src, t - 1);
      int len = 0;
      while (t < 10 && tag_of(out[t]) == src) ++len, ++t;
      EXPECT_TRUE(len == 2 || t == 10) << "seed " << seed;
    }
  }
  EXPECT_GT(runs_seen, 0);
}

TEST(DistortTest, JudderCadence) {
  const auto out = apply({DistortionKind::judder, 2, 0}, tagged(9));
  const int expect[] = {0, 0, 0, 3, 3, 3, 6, 6, 6};
  for (int t = 0; t < 9; ++t) EXPECT_EQ(tag_of(out[t]), expect[t]);
}

TEST(DistortTest, InterlaceWeavesFields) {
  const auto out = apply({DistortionKind::interlace_sim, 1, 0}, tagged(6));
  for (int t = 0; t < 6; ++t) {
    EXPECT_EQ(tag_of(out[t], 0), t);
    EXPECT_EQ(tag_of(out[t], 1), std::min(t + 1, 5));
  }
  const auto s3 = apply({DistortionKind::interlace_sim, 3, 0}, tagged(6));
  EXPECT_EQ(tag_of(s3[1], 3), 4);
}

TEST(DistortTest, FlickerAmplitude) {
  std::vector<Frame> flat(12, Frame{Image(32, 32, 100.0), 0, 8});
  for (int s = 1; s <= 5; ++s) {
    const auto out = apply({DistortionKind::flicker, s, 0}, flat);
    double peak = 0.0;
    for (const auto& f : out) peak = std::max(peak, f.luma(5, 5) - 100.0);
    EXPECT_NEAR(peak, 4.0 * s, 0.5);
    EXPECT_EQ(out[0].luma(0, 0), 100.0);  // phase 0
  }
}

TEST(DistortTest, BlurMatchesGaussianEdge) {
  Image step(64, 8);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 64; ++x) step(y, x) = x < 32 ? 20.0 : 220.0;
  std::vector<Frame> f(5, Frame{step, 0, 8});
  for (int s = 1; s <= 5; ++s) {
    const auto out = apply({DistortionKind::blur, s, 0}, f);
    for (int x = 32 - 2 * s; x < 32 + 2 * s; ++x) {
      // Step response of the sampled, normalised Gaussian truncated at 3 sigma.
      double above = 0.0, total = 0.0;
      for (int k = -3 * s; k <= 3 * s; ++k) {
        const double w = std::exp(-0.5 * k * k / double(s * s));
        total += w;
        if (x + k >= 32) above += w;
      }
      EXPECT_NEAR(out[0].luma(4, x), 20.0 + 200.0 * above / total, 0.5 + 1e-9) << "s=" << s << " x=" << x;
      EXPECT_NEAR(out[0].luma(4, x), 20.0 + 200.0 * normal_cdf((x - 31.5) / s), 2.0);
    }
  }
}

TEST(DistortTest, NoiseSigma) {
  std::vector<Frame> f(5, Frame{Image(128, 128, 128.0), 0, 8});
  for (int s = 1; s <= 5; ++s) {
    const auto out = apply({DistortionKind::noise, s, 3}, f);
    double ss = 0.0;
    for (double v : out[2].luma.storage()) ss += (v - 128.0) * (v - 128.0);
    // Rounding adds 1/12 to the variance.
    const double sd = std::sqrt(ss / out[2].luma.storage().size() - 1.0 / 12.0);
    EXPECT_NEAR(sd, 2.0 * s, 0.05 * 2.0 * s);
  }
  const auto a = apply({DistortionKind::noise, 2, 1}, f), b = apply({DistortionKind::noise, 2, 2}, f);
  EXPECT_NE(a[0].luma.storage(), b[0].luma.storage());
}

TEST(DistortTest, BlurShiftsMscnShape) {
  const Image still = scenes::dead_leaves(256, 256, 3);
  std::vector<Frame> f(5, scenes::as_frame(still));
  const auto win = GaussianWindow::make(7.0 / 6.0);
  const double a0 = fit_ggd(mscn(f[0].luma, win, 1.0).values.values()).alpha;
  const auto blurred = apply({DistortionKind::blur, 3, 0}, f);
  const double a3 = fit_ggd(mscn(blurred[0].luma, win, 1.0).values.values()).alpha;
  RecordProperty("pristine_alpha", std::to_string(a0));
  RecordProperty("blur3_alpha", std::to_string(a3));
  EXPECT_GE(std::abs(a3 - a0), 0.15);
}

TEST(DistortTest, SeverityIsMonotone) {
  const auto f = clip(6);
  double prev_blur = INFINITY, prev_noise = 0.0;
  for (int s = 1; s <= 5; ++s) {
    const auto b = apply({DistortionKind::blur, s, 0}, f);
    const auto n = apply({DistortionKind::noise, s, 0}, f);
    double grad = 0.0, dev = 0.0;
    for (int y = 0; y < 64; ++y)
      for (int x = 1; x < 64; ++x) grad += std::abs(b[2].luma(y, x) - b[2].luma(y, x - 1));
    for (std::size_t i = 0; i < f[2].luma.storage().size(); ++i)
      dev += std::abs(n[2].luma.storage()[i] - f[2].luma.storage()[i]);
    EXPECT_LT(grad, prev_blur);
    EXPECT_GT(dev, prev_noise);
    prev_blur = grad;
    prev_noise = dev;
  }
  for (int s = 1; s < 5; ++s) EXPECT_GT(proxy_mos(s), proxy_mos(s + 1));
  EXPECT_EQ(proxy_mos(3), 46.0);
}
