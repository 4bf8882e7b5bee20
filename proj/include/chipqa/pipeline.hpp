#pragma once

#include <array>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "chipqa/chips.hpp"
#include "chipqa/core.hpp"
#include "chipqa/flow.hpp"
#include "chipqa/niqe.hpp"
#include "chipqa/nvs.hpp"
#include "chipqa/spatialops.hpp"
#include "chipqa/videoio.hpp"

namespace chipqa {

inline constexpr int kFeatureCount = 109;
inline constexpr int kLayoutVersion = 1;

// Offsets of the three blocks inside a FeatureVector.
inline constexpr int kChipBlock = 0;
inline constexpr int kGradientBlock = 36;
inline constexpr int kSpatialBlock = 72;

enum DegeneracyFlag : std::uint32_t {
  kDegenerateChips = 1u << 0,
  kDegenerateGradientChips = 1u << 1,
  kDegenerateSpatial = 1u << 2,
};

struct FeatureVector {
  std::array<double, kFeatureCount> values{};
  int layout_version = kLayoutVersion;
  std::uint32_t degeneracy_flags = 0;
  int time_index = 0;  // 0-based index of I_T
};

struct VideoFeatures {
  std::vector<FeatureVector> per_instant;
  std::array<double, kFeatureCount> pooled{};
  std::uint32_t degeneracy_flags = 0;  // union over instants
  std::string video_id;
  std::string content_id;
};

struct ExtractConfig {
  int t_prime = 5;
  int patch = 5;
  bool allow_unequal = false;
  int temporal_stride = 1;
  int niqe_every = 1;
  double window_sigma = 7.0 / 6.0;
  double mscn_constant = 0.0;  // 0: derive from bit depth
  int jobs = 1;
};

inline std::array<double, kFeatureCount> pool_mean(const std::vector<FeatureVector>& v) {
  // Running mean: identical instants pool to themselves exactly.
  std::array<double, kFeatureCount> out{};
  for (std::size_t k = 0; k < v.size(); ++k)
    for (int i = 0; i < kFeatureCount; ++i) out[i] += (v[k].values[i] - out[i]) / static_cast<double>(k + 1);
  return out;
}

// Streams frames once and emits one FeatureVector per time instant T >= T'-1 (0-based)
// at the configured stride. Retains the last T' MSCN fields per scale per domain.
class Extractor {
 public:
  Extractor(ExtractConfig cfg, const PristineModel& model, const FlowEstimator& flow)
      : cfg_(cfg),
        geo_(ChipGeometry::make(cfg.t_prime, cfg.patch, cfg.allow_unequal)),
        window_(GaussianWindow::make(cfg.window_sigma)),
        model_(model),
        flow_(flow),
        scales_{ScaleState(geo_.t_prime), ScaleState(geo_.t_prime)} {
    if (cfg_.temporal_stride < 1) throw Error(ErrorCode::InvalidArgument, "temporal stride must be >= 1");
    if (cfg_.niqe_every < 1) throw Error(ErrorCode::InvalidArgument, "niqe-every must be >= 1");
  }

  std::optional<FeatureVector> push(const Frame& frame) {
    const int n = frames_seen_;
    std::array<Image, 2> luma{frame.luma, downsample2(frame).luma};
    Prepared p = prepare(frame, std::move(luma), scales_[0].prev_luma, scales_[1].prev_luma, emits(n), cfg_.jobs);
    std::optional<FeatureVector> out;
    if (p.emit) {
      const bool spatial_due = emitted_ % cfg_.niqe_every == 0;
      commit(p);
      Fitted f = fit(view(scales_[0].pixel), view(scales_[1].pixel), view(scales_[0].gradient),
                     view(scales_[1].gradient), p, spatial_due, cfg_.jobs);
      out = finish(std::move(f), p.index);
    } else {
      commit(p);
    }
    return out;
  }

  // Same results as calling push() on each frame in order. Per-frame transforms and flow run
  // in parallel across the batch, then the batch's instants are fitted in parallel.
  std::vector<std::optional<FeatureVector>> push_batch(const std::vector<Frame>& frames) {
    const std::size_t n = frames.size();
    const int jobs = cfg_.jobs;
    std::vector<std::array<Image, 2>> luma(n);
    parallel_for(n, jobs, [&](std::size_t i) { luma[i] = {frames[i].luma, downsample2(frames[i]).luma}; });
    std::vector<Prepared> prep(n);
    parallel_for(n, jobs, [&](std::size_t i) {
      const Image& p0 = i == 0 ? scales_[0].prev_luma : luma[i - 1][0];
      const Image& p1 = i == 0 ? scales_[1].prev_luma : luma[i - 1][1];
      prep[i] = prepare(frames[i], luma[i], p0, p1, emits(frames_seen_ + static_cast<int>(i)), 1);
    });

    // Fields of the window history followed by the batch, per ring (pixel s1, s2, gradient s1, s2).
    std::array<std::vector<const Field*>, 4> hist;
    for (int s = 0; s < 2; ++s) {
      hist[s] = scales_[s].pixel.view();
      hist[2 + s] = scales_[s].gradient.view();
    }
    const std::size_t base = hist[0].size();
    for (const auto& p : prep)
      for (int s = 0; s < 2; ++s) {
        hist[s].push_back(&p.pix[s]);
        hist[2 + s].push_back(&p.grad[s]);
      }

    struct Task {
      std::size_t frame;
      bool spatial_due;
    };
    std::vector<Task> tasks;
    for (std::size_t i = 0, emitted = emitted_; i < n; ++i)
      if (prep[i].emit) tasks.push_back({i, emitted++ % cfg_.niqe_every == 0});

    const auto window = [&](int ring, std::size_t i) {
      const std::size_t end = base + i + 1;
      return std::vector<const Field*>(hist[ring].begin() + (end - geo_.t_prime), hist[ring].begin() + end);
    };
    std::vector<Fitted> fitted(tasks.size());
    parallel_for(tasks.size(), jobs, [&](std::size_t k) {
      const std::size_t i = tasks[k].frame;
      fitted[k] = fit(window(0, i), window(1, i), window(2, i), window(3, i), prep[i], tasks[k].spatial_due, 1);
    });

    std::vector<std::optional<FeatureVector>> out(n);
    for (std::size_t i = 0, k = 0; i < n; ++i) {
      commit(prep[i]);
      if (k < tasks.size() && tasks[k].frame == i) {
        out[i] = finish(std::move(fitted[k]), prep[i].index);
        ++k;
      }
    }
    return out;
  }

  // Receives the full-scale pixel chip frame S_T of every emitted instant.
  void set_chip_sink(std::function<void(const ChipFrame&)> sink) { chip_sink_ = std::move(sink); }

  int frames_seen() const { return frames_seen_; }

  // Largest number of MSCN fields held at once by any ring.
  int peak_retained() const {
    int p = 0;
    for (const auto& s : scales_) p = std::max({p, s.pixel.peak_retained(), s.gradient.peak_retained()});
    return p;
  }

  const ChipGeometry& geometry() const { return geo_; }
  const ExtractConfig& config() const { return cfg_; }

 private:
  struct ScaleState {
    explicit ScaleState(int t_prime) : pixel(t_prime), gradient(t_prime) {}
    Image prev_luma;
    FieldRing pixel;
    FieldRing gradient;
  };

  // Everything about one frame that depends only on it and its predecessor.
  struct Prepared {
    int index = 0;
    bool emit = false;
    std::array<Image, 2> luma;
    Image sigma;  // full-scale local deviation, for the spatial block
    std::array<Field, 2> pix, grad;
    std::array<PatchFlowGrid, 2> grids;
  };

  struct Fitted {
    std::array<ChipFrame, 4> chip_frames;  // pixel s1, pixel s2, gradient s1, gradient s2
    DomainFeatures chips_pix, chips_grad;
    std::optional<SpatialFeatureBlock> spatial;
  };

  static std::vector<const Field*> view(const FieldRing& r) { return r.view(); }

  bool emits(int n) const { return n >= geo_.t_prime - 1 && (n - (geo_.t_prime - 1)) % cfg_.temporal_stride == 0; }

  Prepared prepare(const Frame& frame, std::array<Image, 2> luma, const Image& prev0, const Image& prev1, bool emit,
                   int jobs) const {
    const double c = cfg_.mscn_constant > 0.0 ? cfg_.mscn_constant : default_mscn_constant(frame.bit_depth);
    Prepared p;
    p.index = frame.index;
    p.emit = emit;
    p.luma = std::move(luma);
    std::array<LocalMoments, 2> moments;
    // Per-scale transforms and (when emitting) flow from the previous frame.
    parallel_for(emit ? 4 : 2, jobs, [&](std::size_t task) {
      const int s = static_cast<int>(task % 2);
      if (task < 2) {
        moments[s] = local_moments(p.luma[s], window_);
        p.pix[s] = mscn_from_moments(p.luma[s], moments[s], c);
        p.grad[s] = mscn(sobel_magnitude(p.luma[s]).values, window_, c);
      } else {
        p.grids[s] = median_pool(flow_.estimate(s == 0 ? prev0 : prev1, p.luma[s]), geo_.patch);
      }
    });
    p.sigma = std::move(moments[0].sigma.values);
    return p;
  }

  // Moves the frame's fields into the rings; grids and sigma stay behind for fitting.
  void commit(Prepared& p) {
    ++frames_seen_;
    for (int s = 0; s < 2; ++s) {
      scales_[s].pixel.push(std::move(p.pix[s]));
      scales_[s].gradient.push(std::move(p.grad[s]));
      scales_[s].prev_luma = std::move(p.luma[s]);
    }
  }

  Fitted fit(const std::vector<const Field*>& pix1, const std::vector<const Field*>& pix2,
             const std::vector<const Field*>& grad1, const std::vector<const Field*>& grad2, const Prepared& p,
             bool spatial_due, int jobs) const {
    Fitted f;
    const std::array<const std::vector<const Field*>*, 4> rings{&pix1, &pix2, &grad1, &grad2};
    parallel_for(5, jobs, [&](std::size_t task) {
      if (task < 4) {
        f.chip_frames[task] = aggregate_chips(*rings[task], p.grids[task % 2], geo_, p.index);
      } else if (spatial_due) {
        const SpatialInputs in{pix1.back()->values, p.sigma, pix2.back()->values};
        f.spatial = spatial_block(in, model_);
      }
    });
    parallel_for(2, jobs, [&](std::size_t d) {
      (d == 0 ? f.chips_pix : f.chips_grad) = domain_features(f.chip_frames[2 * d], f.chip_frames[2 * d + 1]);
    });
    return f;
  }

  FeatureVector finish(Fitted f, int index) {
    FeatureVector fv;
    fv.time_index = index;
    if (f.spatial) last_spatial_ = *f.spatial;
    std::copy(f.chips_pix.values.begin(), f.chips_pix.values.end(), fv.values.begin() + kChipBlock);
    std::copy(f.chips_grad.values.begin(), f.chips_grad.values.end(), fv.values.begin() + kGradientBlock);
    std::copy(last_spatial_.features.begin(), last_spatial_.features.end(), fv.values.begin() + kSpatialBlock);
    if (f.chips_pix.degenerate) fv.degeneracy_flags |= kDegenerateChips;
    if (f.chips_grad.degenerate) fv.degeneracy_flags |= kDegenerateGradientChips;
    if (last_spatial_.degenerate) fv.degeneracy_flags |= kDegenerateSpatial;
    if (chip_sink_) chip_sink_(f.chip_frames[0]);
    ++emitted_;
    return fv;
  }

  ExtractConfig cfg_;
  ChipGeometry geo_;
  GaussianWindow window_;
  const PristineModel& model_;
  const FlowEstimator& flow_;
  std::array<ScaleState, 2> scales_;
  SpatialFeatureBlock last_spatial_;
  std::function<void(const ChipFrame&)> chip_sink_;
  int frames_seen_ = 0;
  int emitted_ = 0;
};

// Feature vector for instant T given the T' frames ending at T (oldest first). The frame
// before the window is needed for flow, so `history` holds T'+1 frames when T > T'-1.
inline FeatureVector extract_instant(const std::vector<Frame>& history, const PristineModel& model,
                                     const FlowEstimator& flow, const ExtractConfig& cfg = {}) {
  if (static_cast<int>(history.size()) < cfg.t_prime)
    throw Error(ErrorCode::InsufficientHistory, "need " + std::to_string(cfg.t_prime) + " frames, have " +
                                                    std::to_string(history.size()));
  ExtractConfig single = cfg;
  single.temporal_stride = 1;
  single.niqe_every = 1;
  Extractor ex(single, model, flow);
  std::optional<FeatureVector> last;
  for (const auto& f : history) last = ex.push(f);
  return *last;
}

template <FrameSource Source>
VideoFeatures extract_video(const Source& src, const PristineModel& model, const FlowEstimator& flow,
                            const ExtractConfig& cfg = {}, Extractor* observer = nullptr) {
  if (src.frame_count() < cfg.t_prime)
    throw Error(ErrorCode::VideoTooShort, "video has " + std::to_string(src.frame_count()) +
                                              " frames, need at least " + std::to_string(cfg.t_prime));
  Extractor local(cfg, model, flow);
  Extractor& ex = observer ? *observer : local;
  VideoFeatures vf;
  const auto keep = [&](std::optional<FeatureVector>& fv) {
    if (!fv) return;
    vf.degeneracy_flags |= fv->degeneracy_flags;
    vf.per_instant.push_back(std::move(*fv));
  };
  const int jobs = ex.config().jobs;
  if (jobs <= 1) {
    for (int t = 0; t < src.frame_count(); ++t) {
      Frame f = src.read(t);
      f.index = t;
      auto fv = ex.push(f);
      keep(fv);
    }
  } else {
    // Batches of 2 * jobs frames keep every worker busy while bounding memory.
    const int batch = 2 * jobs;
    for (int t0 = 0; t0 < src.frame_count(); t0 += batch) {
      std::vector<Frame> frames;
      for (int t = t0; t < std::min(t0 + batch, src.frame_count()); ++t) {
        frames.push_back(src.read(t));
        frames.back().index = t;
      }
      for (auto& fv : ex.push_batch(frames)) keep(fv);
    }
  }
  vf.pooled = pool_mean(vf.per_instant);
  return vf;
}

inline std::vector<std::string> feature_names() {
  std::vector<std::string> names;
  names.reserve(kFeatureCount);
  for (int i = 1; i <= kFeatureCount; ++i) names.push_back("f" + std::to_string(i));
  return names;
}

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Header: f1..f109,video_id,content_id. One row per video (pooled features).
inline void write_feature_csv(std::ostream& out, const std::vector<VideoFeatures>& videos) {
  for (const auto& n : feature_names()) out << n << ',';
  out << "video_id,content_id\n";
  for (const auto& v : videos) {
    for (double x : v.pooled) out << format_double(x) << ',';
    out << v.video_id << ',' << v.content_id << '\n';
  }
}

// Header: video_id,content_id,time_index,f1..f109.
inline void write_instant_csv(std::ostream& out, const std::vector<VideoFeatures>& videos) {
  out << "video_id,content_id,time_index";
  for (const auto& n : feature_names()) out << ',' << n;
  out << '\n';
  for (const auto& v : videos)
    for (const auto& fv : v.per_instant) {
      out << v.video_id << ',' << v.content_id << ',' << fv.time_index;
      for (double x : fv.values) out << ',' << format_double(x);
      out << '\n';
    }
}

}  // namespace chipqa
