#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "chipqa/core.hpp"
#include "chipqa/videoio.hpp"

namespace chipqa {

enum class DistortionKind { frame_drop, judder, flicker, blur, noise, interlace_sim };

inline constexpr DistortionKind kAllDistortions[] = {DistortionKind::frame_drop, DistortionKind::judder,
                                                     DistortionKind::flicker,    DistortionKind::blur,
                                                     DistortionKind::noise,      DistortionKind::interlace_sim};

inline const char* to_string(DistortionKind k) {
  switch (k) {
    case DistortionKind::frame_drop: return "frame_drop";
    case DistortionKind::judder: return "judder";
    case DistortionKind::flicker: return "flicker";
    case DistortionKind::blur: return "blur";
    case DistortionKind::noise: return "noise";
    case DistortionKind::interlace_sim: return "interlace_sim";
  }
  return "?";
}

inline DistortionKind parse_distortion(const std::string& s) {
  for (auto k : kAllDistortions)
    if (s == to_string(k)) return k;
  throw Error(ErrorCode::InvalidArgument, "unknown distortion kind '" + s + "'");
}

struct DistortionSpec {
  DistortionKind kind = DistortionKind::blur;
  int severity = 1;  // 1..5
  std::uint64_t seed = 0;
};

inline constexpr int kMinDistortFrames = 5;
inline constexpr int kFlickerPeriod = 6;
inline constexpr double kFrameDropRate = 0.15;

inline double proxy_mos(int severity) { return 100.0 - 18.0 * severity; }

namespace detail {

inline Image quantize(Image img, double max_code) {
  for (double& v : img.storage()) v = std::clamp(std::round(v), 0.0, max_code);
  return img;
}

inline Image gaussian_blur_reflect(const Image& img, double sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> taps(2 * radius + 1);
  double sum = 0.0;
  for (int k = -radius; k <= radius; ++k) sum += taps[k + radius] = std::exp(-0.5 * k * k / (sigma * sigma));
  for (double& t : taps) t /= sum;
  const int w = img.width(), h = img.height();
  Image tmp(w, h), out(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) acc += taps[k + radius] * img(y, reflect101(x + k, w));
      tmp(y, x) = acc;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) acc += taps[k + radius] * tmp(reflect101(y + k, h), x);
      out(y, x) = acc;
    }
  return out;
}

}  // namespace detail

// Source frame index shown at each output slot for the temporal kinds.
inline std::vector<int> frame_drop_schedule(int n, int severity, std::uint64_t seed) {
  std::vector<int> src(n);
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution start(kFrameDropRate);
  for (int t = 0; t < n;) {
    src[t] = t;
    if (t > 0 && start(rng)) {
      const int held = t - 1;
      for (int k = 0; k < severity && t < n; ++k, ++t) src[t] = held;
    } else {
      ++t;
    }
  }
  return src;
}

inline std::vector<int> judder_schedule(int n, int severity) {
  const int m = severity + 1;
  std::vector<int> src(n);
  for (int t = 0; t < n; ++t) src[t] = m * (t / m);
  return src;
}

inline std::vector<Frame> apply(const DistortionSpec& spec, const std::vector<Frame>& frames) {
  if (spec.severity < 1 || spec.severity > 5)
    throw Error(ErrorCode::InvalidArgument, "severity must be in 1..5, got " + std::to_string(spec.severity));
  const int n = static_cast<int>(frames.size());
  if (n < kMinDistortFrames)
    throw Error(ErrorCode::TooShort, "need >= " + std::to_string(kMinDistortFrames) + " frames, got " +
                                         std::to_string(n));
  const int s = spec.severity;
  std::vector<Frame> out;
  out.reserve(frames.size());
  const auto with_luma = [](const Frame& f, int index, Image luma) {
    Frame g = f;
    g.index = index;
    g.luma = detail::quantize(std::move(luma), f.max_code());
    return g;
  };

  switch (spec.kind) {
    case DistortionKind::frame_drop:
    case DistortionKind::judder: {
      const auto src = spec.kind == DistortionKind::frame_drop ? frame_drop_schedule(n, s, spec.seed)
                                                               : judder_schedule(n, s);
      for (int t = 0; t < n; ++t) out.push_back(with_luma(frames[src[t]], t, frames[src[t]].luma));
      break;
    }
    case DistortionKind::flicker: {
      // Periodic brightening: a gain whose lift at the frame's mean luma peaks at 4*severity codes.
      for (int t = 0; t < n; ++t) {
        const double phase = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * t / kFlickerPeriod));
        const double m = std::max(mean_of(frames[t].luma.values()), 1.0);
        const double gain = 1.0 + 4.0 * s * phase / m;
        Image img = frames[t].luma;
        for (double& v : img.storage()) v *= gain;
        out.push_back(with_luma(frames[t], t, std::move(img)));
      }
      break;
    }
    case DistortionKind::blur:
      for (int t = 0; t < n; ++t)
        out.push_back(with_luma(frames[t], t, detail::gaussian_blur_reflect(frames[t].luma, s)));
      break;
    case DistortionKind::noise: {
      std::mt19937_64 rng(spec.seed);
      std::normal_distribution<double> gauss(0.0, 2.0 * s);
      for (int t = 0; t < n; ++t) {
        Image img = frames[t].luma;
        for (double& v : img.storage()) v += gauss(rng);
        out.push_back(with_luma(frames[t], t, std::move(img)));
      }
      break;
    }
    case DistortionKind::interlace_sim:
      // Even rows from frame t, odd rows from frame t + severity (clamped at the end).
      for (int t = 0; t < n; ++t) {
        const Image& other = frames[std::min(t + s, n - 1)].luma;
        Image img = frames[t].luma;
        if (!img.same_shape(other)) throw Error(ErrorCode::DimensionMismatch, "frames differ in size");
        for (int y = 1; y < img.height(); y += 2) std::copy_n(other.row(y), img.width(), img.row(y));
        out.push_back(with_luma(frames[t], t, std::move(img)));
      }
      break;
  }
  return out;
}

}  // namespace chipqa
