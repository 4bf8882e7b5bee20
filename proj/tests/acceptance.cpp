// Acceptance suite. One test per criterion; a listener prints one verdict line each.

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "chipqa/distortlab.hpp"
#include "chipqa/eval.hpp"
#include "chipqa/histogram.hpp"
#include "chipqa/pipeline.hpp"
#include "support/oracles.hpp"
#include "support/samplers.hpp"
#include "support/scenes.hpp"
#include "support/tempdir.hpp"

using namespace chipqa;

namespace {

std::map<int, std::string> g_detail;

void note(int criterion, const std::string& text) {
  auto& d = g_detail[criterion];
  if (!d.empty()) d += "; ";
  d += text;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

const FlowEstimator& fb() {
  static const auto f = make_flow_estimator("farneback");
  return *f;
}

// Pristine model with 32-pixel NIQE patches, fitted on lightly noisy dead-leaves stills.
const PristineModel& pristine32() {
  static const PristineModel m = [] {
    std::vector<Frame> corpus;
    for (int i = 0; i < 40; ++i) {
      Image img = scenes::dead_leaves(256, 256, 5000 + i);
      std::mt19937_64 rng(i);
      std::normal_distribution<double> g(0.0, 0.5);
      for (double& v : img.storage()) v = std::clamp(std::round(v + g(rng)), 0.0, 255.0);
      corpus.push_back(scenes::as_frame(std::move(img)));
    }
    return fit_pristine(corpus, 32);
  }();
  return m;
}

std::vector<Frame> clip(int w, int h, int frames, std::uint64_t seed) {
  scenes::ClipParams p;
  p.width = w;
  p.height = h;
  p.frames = frames;
  p.seed = seed;
  return scenes::natural_clip(p);
}

double rel_err(double got, double want) { return std::abs(got - want) / std::abs(want); }

// Synthetic corpus: content c alternates blur and noise, severities 1..5, proxy MOS.
struct Corpus {
  Matrix x;
  std::vector<double> mos;
  std::vector<std::string> ids;
};

Corpus build_corpus(bool all_kinds) {
  Corpus c;
  for (int content = 0; content < 20; ++content) {
    const auto src = clip(96, 96, 16, 300 + content);
    const DistortionKind kind = all_kinds          ? kAllDistortions[content % std::size(kAllDistortions)]
                                : content % 2 == 0 ? DistortionKind::noise
                                                   : DistortionKind::blur;
    for (int s = 1; s <= 5; ++s) {
      const auto d = apply({kind, s, static_cast<std::uint64_t>(content * 10 + s)}, src);
      const auto vf = extract_video(MemoryFrames(d), pristine32(), fb());
      c.x.emplace_back(vf.pooled.begin(), vf.pooled.end());
      c.mos.push_back(proxy_mos(s));
      c.ids.push_back("c" + std::to_string(content));
    }
  }
  return c;
}

const Corpus& corpus() {
  static const Corpus c = build_corpus(false);
  return c;
}

class VerdictPrinter : public ::testing::EmptyTestEventListener {
 public:
  void OnTestEnd(const ::testing::TestInfo& info) override {
    const std::string name = info.name();
    const int n = std::stoi(name.substr(name.find_first_of("0123456789")));
    const bool ok = info.result()->Passed();
    std::printf("[criterion %d] %s %s\n", n, ok ? "PASS" : "FAIL", g_detail[n].c_str());
    std::fflush(stdout);
  }
};

}  // namespace

TEST(Acceptance, Criterion1) {
  const auto frames = clip(64, 64, 8, 11);
  const PristineModel& model = pristine32();
  const auto t0 = std::chrono::steady_clock::now();
  const auto vf = extract_video(MemoryFrames(frames), model, fb());
  const double secs = seconds_since(t0);
  note(1, fmt("%zu instants, %.3fs", vf.per_instant.size(), secs));
  EXPECT_LT(secs, 1.0);
  ASSERT_EQ(vf.per_instant.size(), 4u);
  for (const auto& fv : vf.per_instant) {
    ASSERT_EQ(fv.values.size(), 109u);
    for (double v : fv.values) ASSERT_TRUE(std::isfinite(v));
  }
  EXPECT_EQ(kChipBlock, 0);
  EXPECT_EQ(kGradientBlock, 36);
  EXPECT_EQ(kSpatialBlock, 72);

  // Rebuild each block of the last instant from the public building blocks.
  const auto& last = vf.per_instant.back();
  const int T = last.time_index, tp = 5, R = 5;
  const auto win = GaussianWindow::make(7.0 / 6.0);
  std::array<std::vector<Field>, 2> pix, grad;
  std::array<PatchFlowGrid, 2> grids;
  for (int s = 0; s < 2; ++s) {
    auto luma = [&](int t) { return s == 0 ? frames[t].luma : downsample2(frames[t]).luma; };
    for (int t = T - tp + 1; t <= T; ++t) {
      pix[s].push_back(mscn(luma(t), win, 1.0));
      grad[s].push_back(mscn(sobel_magnitude(luma(t)).values, win, 1.0));
    }
    grids[s] = median_pool(estimate_flow(luma(T - 1), luma(T)), R);
  }
  const auto geo = ChipGeometry::make(tp, R);
  auto chips = [&](std::array<std::vector<Field>, 2>& vol) {
    return domain_features(aggregate_chips(oracles::view_of(vol[0]), grids[0], geo, T),
                           aggregate_chips(oracles::view_of(vol[1]), grids[1], geo, T));
  };
  const auto cp = chips(pix), cg = chips(grad);
  const auto sp = spatial_block(frames[T], model);
  int mismatched = 0;
  for (int i = 0; i < 36; ++i) {
    mismatched += last.values[kChipBlock + i] != cp.values[i];
    mismatched += last.values[kGradientBlock + i] != cg.values[i];
  }
  for (int i = 0; i < 37; ++i) mismatched += last.values[kSpatialBlock + i] != sp.features[i];
  note(1, fmt("block rebuild mismatches %d", mismatched));
  EXPECT_EQ(mismatched, 0);
}

TEST(Acceptance, Criterion2) {
  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t n = 1'000'000;
  double worst_ggd = 0.0, worst_aggd = 0.0;
  std::map<double, samplers::UnitDraws> draws;
  std::uint64_t seed = 1;
  for (double shape : {0.8, 1.0, 1.5, 2.0, 2.5, 3.0}) draws[shape] = samplers::unit_draws(n, shape, seed++);
  for (double alpha : {0.8, 1.0, 1.5, 2.0, 3.0}) {
    const auto x = samplers::aggd_from(draws[alpha], 1.0, 1.0);
    const double e = rel_err(fit_ggd(x).alpha, alpha);
    worst_ggd = std::max(worst_ggd, e);
    EXPECT_LE(e, 0.05) << "alpha " << alpha;
  }
  for (double nu : {0.8, 1.5, 2.5})
    for (auto [sl, sr] : {std::pair{1.0, 1.0}, std::pair{1.0, 2.0}, std::pair{2.0, 0.5}}) {
      const auto x = samplers::aggd_from(draws[nu], sl, sr);
      const auto p = fit_aggd(x);
      for (double e : {rel_err(p.nu, nu), rel_err(std::sqrt(p.sigma_l_sq), sl), rel_err(std::sqrt(p.sigma_r_sq), sr)}) {
        worst_aggd = std::max(worst_aggd, e);
        EXPECT_LE(e, 0.075) << "nu " << nu << " sl " << sl << " sr " << sr;
      }
    }
  const double secs = seconds_since(t0);
  note(2, fmt("worst GGD err %.4f, worst AGGD err %.4f, %.1fs", worst_ggd, worst_aggd, secs));
  EXPECT_LT(secs, 30.0);
}

TEST(Acceptance, Criterion3) {
  std::mt19937_64 rng(2024);
  int exact = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto vol = oracles::random_volume(25, 25, 5, rng);
    const auto grid = oracles::random_grid(5, 5, 5, rng);
    const auto s = aggregate_chips(oracles::view_of(vol), grid, ChipGeometry::make(5, 5));
    const auto ref = oracles::naive_chip_frame(vol, grid.med_u, grid.med_v, 5);
    bool same = s.values.width() == ref.width() && s.values.height() == ref.height();
    for (std::size_t i = 0; same && i < ref.size(); ++i)
      same = std::bit_cast<std::uint64_t>(s.values.storage()[i]) == std::bit_cast<std::uint64_t>(ref.storage()[i]);
    exact += same;
  }
  note(3, fmt("%d/100 bit-exact", exact));
  EXPECT_EQ(exact, 100);
}

TEST(Acceptance, Criterion4) {
  auto pooled_median = [](const Image& a) {
    std::vector<double> v(a.storage().begin(), a.storage().end());
    std::nth_element(v.begin(), v.begin() + v.size() / 2, v.end());
    return v[v.size() / 2];
  };
  double worst = 0.0;
  std::uint64_t seed = 40;
  for (int axis = 0; axis < 2; ++axis)
    for (int d : {-3, -2, -1, 1, 2, 3}) {
      const int dx = axis == 0 ? d : 0, dy = axis == 1 ? d : 0;
      const auto [a, b] = scenes::shifted_pair(128, 96, dx, dy, seed++);
      const auto g = median_pool(estimate_flow(a, b), 5);
      const double eu = std::abs(pooled_median(g.med_u) - dx), ev = std::abs(pooled_median(g.med_v) - dy);
      worst = std::max({worst, eu, ev});
      EXPECT_LE(eu, 0.25) << "shift " << dx << "," << dy;
      EXPECT_LE(ev, 0.25) << "shift " << dx << "," << dy;
    }
  double worst_zero = 0.0;
  for (std::uint64_t s = 1; s <= 3; ++s) {
    const Image img = scenes::smooth_texture(128, 96, 70 + s);
    const auto g = median_pool(estimate_flow(img, img), 5);
    Image mag(g.med_u.width(), g.med_u.height());
    for (std::size_t i = 0; i < mag.size(); ++i)
      mag.storage()[i] = std::hypot(g.med_u.storage()[i], g.med_v.storage()[i]);
    const double m = pooled_median(mag);
    worst_zero = std::max(worst_zero, m);
    EXPECT_LT(m, 0.05);
  }
  note(4, fmt("worst shift error %.4f px, worst zero-motion median %.2e px", worst, worst_zero));
}

TEST(Acceptance, Criterion5) {
  const PristineModel& model = pristine32();
  auto st_sample = [&](const std::vector<Frame>& frames) {
    Extractor ex(ExtractConfig{}, model, fb());
    std::vector<double> s;
    ex.set_chip_sink([&](const ChipFrame& c) { s.insert(s.end(), c.values.storage().begin(), c.values.storage().end()); });
    for (const auto& f : frames) ex.push(f);
    return s;
  };
  std::vector<std::vector<Frame>> clips;
  std::vector<std::vector<double>> pristine;
  for (int c = 0; c < 10; ++c) {
    clips.push_back(clip(96, 96, 16, 100 + c));
    pristine.push_back(st_sample(clips.back()));
  }
  for (DistortionKind kind : kAllDistortions) {
    std::string counts;
    for (int s = 3; s <= 5; ++s) {
      int rejected = 0;
      for (int c = 0; c < 10; ++c) {
        const auto d = apply({kind, s, static_cast<std::uint64_t>(c)}, clips[c]);
        rejected += ks_two_sample(pristine[c], st_sample(d)).p_value < 0.01;
      }
      counts += fmt("%s%d", s == 3 ? "" : "/", rejected);
      EXPECT_GE(rejected, 8) << to_string(kind) << " severity " << s;
    }
    note(5, fmt("%s %s", to_string(kind), counts.c_str()));
  }
}

TEST(Acceptance, Criterion6) {
  const Corpus& c = corpus();
  const auto rep = run_protocol(c.x, c.mos, c.ids, 10, 7);
  note(6, fmt("blur/noise corpus median SROCC %.4f LCC %.4f, failed splits %d", rep.median_srocc, rep.median_lcc,
              rep.failed));
  EXPECT_EQ(rep.failed, 0);
  EXPECT_GE(rep.median_srocc, 0.80);
  EXPECT_GE(rep.median_lcc, 0.80);

  // Informational: the same protocol when contents cycle through every distortion kind.
  const Corpus all = build_corpus(true);
  const auto rep_all = run_protocol(all.x, all.mos, all.ids, 10, 7);
  note(6, fmt("info: all-kinds corpus SROCC %.4f LCC %.4f", rep_all.median_srocc, rep_all.median_lcc));
}

TEST(Acceptance, Criterion7) {
  const Corpus& c = corpus();
  const int jobs = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  const auto a = run_protocol(c.x, c.mos, c.ids, 100, 99, {}, jobs);
  const auto b = run_protocol(c.x, c.mos, c.ids, 100, 99, {}, jobs);
  int leaks = 0, miscounted = 0;
  for (const auto& r : a.splits) {
    std::set<std::string> train(r.train_ids.begin(), r.train_ids.end());
    for (const auto& id : r.test_ids) leaks += train.count(id);
    std::size_t ntr = 0, nte = 0;
    for (const auto& id : c.ids) (train.count(id) ? ntr : nte)++;
    miscounted += ntr != r.n_train || nte != r.n_test || train.size() + r.test_ids.size() != 20;
  }
  bool bits = a.splits.size() == b.splits.size();
  for (std::size_t i = 0; bits && i < a.splits.size(); ++i)
    bits = std::bit_cast<std::uint64_t>(a.splits[i].srocc) == std::bit_cast<std::uint64_t>(b.splits[i].srocc) &&
           std::bit_cast<std::uint64_t>(a.splits[i].lcc) == std::bit_cast<std::uint64_t>(b.splits[i].lcc);
  const bool same_json = to_json(a).dump() == to_json(b).dump();
  note(7, fmt("100 splits, %d leaked ids, %d miscounted splits, %d failed, reruns %s", leaks, miscounted, a.failed,
              bits && same_json ? "bit-identical" : "differ"));
  EXPECT_EQ(leaks, 0);
  EXPECT_EQ(miscounted, 0);
  EXPECT_TRUE(bits);
  EXPECT_TRUE(same_json);
}

TEST(Acceptance, Criterion8) {
  // Five methods with SROCC means 0.5..0.8 in steps of 0.1, plus an exact copy of the third.
  const std::vector<double> means{0.5, 0.6, 0.7, 0.8};
  std::vector<std::vector<double>> pops;
  std::mt19937_64 rng(8);
  for (double m : means) {
    std::normal_distribution<double> g(m, 0.05);
    std::vector<double> p(1000);
    for (double& v : p) v = std::clamp(g(rng), -1.0, 1.0);
    pops.push_back(std::move(p));
  }
  pops.push_back(pops[2]);
  const std::vector<double> truth{0.5, 0.6, 0.7, 0.8, 0.7};
  const auto m = decision_matrix(pops);
  int agree = 0, total = 0, antisym = 0;
  for (std::size_t i = 0; i < pops.size(); ++i)
    for (std::size_t j = 0; j < pops.size(); ++j) {
      if (i == j) {
        EXPECT_EQ(m[i][j], 0);
        continue;
      }
      const int want = truth[i] > truth[j] ? 1 : truth[i] < truth[j] ? -1 : 0;
      agree += m[i][j] == want;
      antisym += m[i][j] == -m[j][i];
      ++total;
    }
  note(8, fmt("%d/%d entries match known ordering, %d/%d antisymmetric", agree, total, antisym, total));
  EXPECT_EQ(agree, total);
  EXPECT_EQ(antisym, total);
}

TEST(Acceptance, Criterion9) {
  testutil::TempDir dir;
  write_video(dir.file("v.y4m"), clip(960, 540, 150, 9), {25, 1}, true);
  save_pristine(dir.file("m.niqm"), pristine32());
  auto run = [&](int jobs) {
    const std::string out = dir.file("f" + std::to_string(jobs) + ".csv");
    const std::string cmd = "'" CHIPQA_CLI_PATH "' extract --in " + dir.file("v.y4m") + " --pristine " +
                            dir.file("m.niqm") + " --out " + out + " --jobs " + std::to_string(jobs) + " 2>/dev/null";
    const auto t0 = std::chrono::steady_clock::now();
    const int status = std::system(cmd.c_str());
    const double secs = seconds_since(t0);
    EXPECT_TRUE(WIFEXITED(status) && WEXITSTATUS(status) == 0) << cmd;
    return std::pair{secs, testutil::read_text(out)};
  };
  const auto [t1, out1] = run(1);
  const auto [t4, out4] = run(4);
  note(9, fmt("1 worker %.1fs, 4 workers %.1fs, %u hardware threads, outputs %s", t1, t4,
              std::thread::hardware_concurrency(), out1 == out4 && !out1.empty() ? "identical" : "differ"));
  EXPECT_LE(t1, 90.0);
  EXPECT_LE(t4, 30.0);
  EXPECT_FALSE(out1.empty());
  EXPECT_EQ(out1, out4);
}

int main(int argc, char** argv) {
  ::testing::InitGoogleTest(&argc, argv);
  ::testing::UnitTest::GetInstance()->listeners().Append(new VerdictPrinter);
  return RUN_ALL_TESTS();
}
