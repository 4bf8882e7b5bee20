#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "chipqa/dataset.hpp"
#include "chipqa/distortlab.hpp"
#include "chipqa/eval.hpp"
#include "chipqa/histogram.hpp"
#include "chipqa/model.hpp"
#include "chipqa/niqe.hpp"
#include "chipqa/pipeline.hpp"
#include "chipqa/videoio.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace chipqa;

namespace {

void log_event(const std::string& level, const std::string& cmd, const std::string& msg, json extra = json::object()) {
  json j;
  j["level"] = level;
  j["cmd"] = cmd;
  j["msg"] = msg;
  for (auto& [k, v] : extra.items()) j[k] = v;
  std::cerr << j.dump() << '\n';
}

// Writes through a sibling temp file and renames it into place.
template <typename Fn>
void write_atomic(const std::string& path, Fn&& fill) {
  const fs::path target(path);
  if (target.has_parent_path() && !fs::exists(target.parent_path()))
    throw Error(ErrorCode::IoError, "output directory does not exist: '" + target.parent_path().string() + "'");
  const std::string tmp = path + ".tmp." + std::to_string(::getpid());
  try {
    fill(tmp);
    fs::rename(tmp, target);
  } catch (...) {
    std::error_code ec;
    fs::remove(tmp, ec);
    throw;
  }
}

void write_text_atomic(const std::string& path, const std::string& text) {
  write_atomic(path, [&](const std::string& tmp) {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error(ErrorCode::IoError, "cannot create '" + tmp + "'");
    out << text;
    out.close();
    if (!out) throw Error(ErrorCode::IoError, "write failed for '" + path + "'");
  });
}

std::string sidecar_path(const std::string& out) { return out + ".json"; }

std::vector<std::string> flag_names(std::uint32_t f) {
  std::vector<std::string> n;
  if (f & kDegenerateChips) n.push_back("chips");
  if (f & kDegenerateGradientChips) n.push_back("gradient_chips");
  if (f & kDegenerateSpatial) n.push_back("spatial");
  return n;
}

struct GeometryFlags {
  int width = 0;
  int height = 0;
  std::string pix_fmt = "yuv420p";
  int bit_depth = 8;
  bool strict = false;

  void add(CLI::App* app) {
    app->add_option("--width", width, "Frame width for raw .yuv input");
    app->add_option("--height", height, "Frame height for raw .yuv input");
    app->add_option("--pix-fmt", pix_fmt, "Raw pixel format: yuv420p, yuv422p, yuv444p, gray")->capture_default_str();
    app->add_option("--bit-depth", bit_depth, "Raw bit depth (8 or 10)")->capture_default_str();
    app->add_flag("--strict", strict, "Reject a trailing partial frame instead of dropping it");
  }

  OpenOptions options() const {
    OpenOptions o;
    o.strict = strict;
    if (width > 0 || height > 0)
      o.explicit_geometry = Geometry{width, height, parse_pixel_format(pix_fmt), bit_depth};
    return o;
  }

  json to_json() const {
    json j;
    if (width > 0) j["width"] = width;
    if (height > 0) j["height"] = height;
    j["pix_fmt"] = pix_fmt;
    j["bit_depth"] = bit_depth;
    j["strict"] = strict;
    return j;
  }
};

VideoSource open_checked(const std::string& path, const OpenOptions& opts) {
  if (!fs::exists(path)) throw Error(ErrorCode::IoError, "input file not found: '" + path + "'");
  return open_source(path, opts);
}

std::vector<double> parse_list(const std::string& s, const std::string& what) {
  std::vector<double> out;
  std::stringstream in(s);
  std::string cell;
  while (std::getline(in, cell, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(cell, &used));
      if (used != cell.size()) throw std::invalid_argument(cell);
    } catch (const std::logic_error&) {
      throw CLI::ValidationError(what, "not a number list: '" + s + "'");
    }
  }
  if (out.empty()) throw CLI::ValidationError(what, "empty list");
  return out;
}

std::string join(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + format_double(v[i]);
  return s;
}

struct GridFlags {
  std::string c_grid = "0.1,1,10,100,1000";
  std::string gamma_grid = "0.00390625,0.0078125,0.015625,0.03125,0.0625,0.125,0.25,0.5,1";
  std::string epsilon_grid = "0.1,0.5,1.0";
  std::string kernel = "rbf";
  int folds = 5;

  void add(CLI::App* app) {
    app->add_option("--c-grid", c_grid, "Comma-separated C values")->capture_default_str();
    app->add_option("--gamma-grid", gamma_grid, "Comma-separated RBF gamma values")->capture_default_str();
    app->add_option("--epsilon-grid", epsilon_grid, "Comma-separated epsilon values")->capture_default_str();
    app->add_option("--kernel", kernel, "SVR kernel")->check(CLI::IsMember({"rbf", "linear"}))->capture_default_str();
    app->add_option("--folds", folds, "Cross-validation folds")->check(CLI::Range(2, 1000))->capture_default_str();
  }

  TrainConfig config(std::uint64_t seed, int jobs) const {
    TrainConfig c;
    c.c_grid = parse_list(c_grid, "--c-grid");
    c.gamma_grid = parse_list(gamma_grid, "--gamma-grid");
    c.epsilon_grid = parse_list(epsilon_grid, "--epsilon-grid");
    c.kernel = kernel == "linear" ? Kernel::linear : Kernel::rbf;
    c.folds = folds;
    c.seed = seed;
    c.jobs = jobs;
    return c;
  }

  json to_json(const TrainConfig& c) const {
    return json{{"kernel", kernel},
                {"folds", c.folds},
                {"c_grid", c.c_grid},
                {"gamma_grid", c.gamma_grid},
                {"epsilon_grid", c.epsilon_grid}};
  }
};

// ---- extract ----

struct ExtractArgs {
  std::vector<std::string> inputs;
  std::vector<std::string> video_ids;
  std::vector<std::string> content_ids;
  std::string pristine;
  std::string out;
  std::string instants;
  std::string dump_chips;
  std::string flow = "farneback";
  int t_prime = 5;
  int patch = 5;
  bool allow_unequal = false;
  int stride = 1;
  int niqe_every = 1;
  int jobs = 0;
  GeometryFlags geo;
};

std::string id_for(const std::vector<std::string>& given, std::size_t i, const std::string& path,
                   const std::string& flag) {
  if (given.empty()) return fs::path(path).stem().string();
  if (given.size() == 1) return given[0];
  if (i < given.size()) return given[i];
  throw CLI::ValidationError(flag, "give one value, or one per --in");
}

int run_extract(const ExtractArgs& a) {
  if (a.video_ids.size() > 1 && a.video_ids.size() != a.inputs.size())
    throw CLI::ValidationError("--video-id", "give one value per --in");
  if (a.content_ids.size() > 1 && a.content_ids.size() != a.inputs.size())
    throw CLI::ValidationError("--content-id", "give one value per --in");
  ExtractConfig cfg;
  cfg.t_prime = a.t_prime;
  cfg.patch = a.patch;
  cfg.allow_unequal = a.allow_unequal;
  cfg.temporal_stride = a.stride;
  cfg.niqe_every = a.niqe_every;
  cfg.jobs = resolve_jobs(a.jobs);
  ChipGeometry::make(cfg.t_prime, cfg.patch, cfg.allow_unequal);  // validates R = T' early

  if (!fs::exists(a.pristine)) throw Error(ErrorCode::IoError, "pristine model not found: '" + a.pristine + "'");
  const PristineModel model = load_pristine(a.pristine);
  const auto flow = make_flow_estimator(a.flow);
  if (!a.dump_chips.empty() && !fs::is_directory(a.dump_chips))
    throw Error(ErrorCode::IoError, "chip dump directory does not exist: '" + a.dump_chips + "'");

  std::vector<VideoFeatures> videos;
  json per_video = json::array();
  for (std::size_t i = 0; i < a.inputs.size(); ++i) {
    const auto& path = a.inputs[i];
    const VideoSource src = open_checked(path, a.geo.options());
    log_event("info", "extract", "reading", {{"path", path}, {"frames", src.frame_count},
                                             {"width", src.width()}, {"height", src.height()}});
    Extractor ex(cfg, model, *flow);
    const std::string vid = id_for(a.video_ids, i, path, "--video-id");
    if (!a.dump_chips.empty())
      ex.set_chip_sink([&](const ChipFrame& cf) {
        dump_field((fs::path(a.dump_chips) / (vid + "_" + std::to_string(cf.time_index) + ".cqaf")).string(),
                   Field{cf.values, FieldKind::mscn});
      });
    VideoFeatures vf = extract_video(FileFrames(src), model, *flow, cfg, &ex);
    vf.video_id = vid;
    vf.content_id = id_for(a.content_ids, i, path, "--content-id");
    per_video.push_back({{"video_id", vf.video_id},
                         {"content_id", vf.content_id},
                         {"path", path},
                         {"frames", src.frame_count},
                         {"instants", vf.per_instant.size()},
                         {"degeneracy_flags", vf.degeneracy_flags},
                         {"degenerate", flag_names(vf.degeneracy_flags)}});
    if (vf.degeneracy_flags)
      log_event("warn", "extract", "degenerate feature blocks", {{"video_id", vf.video_id},
                                                                 {"blocks", flag_names(vf.degeneracy_flags)}});
    videos.push_back(std::move(vf));
  }

  std::ostringstream csv;
  write_feature_csv(csv, videos);
  write_text_atomic(a.out, csv.str());
  if (!a.instants.empty()) {
    std::ostringstream inst;
    write_instant_csv(inst, videos);
    write_text_atomic(a.instants, inst.str());
  }
  json side;
  side["command"] = "extract";
  side["layout_version"] = kLayoutVersion;
  side["feature_count"] = kFeatureCount;
  side["config"] = {{"t_prime", cfg.t_prime}, {"patch", cfg.patch},        {"allow_unequal", cfg.allow_unequal},
                    {"stride", cfg.temporal_stride}, {"niqe_every", cfg.niqe_every}, {"flow", a.flow},
                    {"jobs", cfg.jobs},         {"pristine", a.pristine},   {"niqe_patch", model.patch_size},
                    {"geometry", a.geo.to_json()}};
  side["videos"] = per_video;
  write_text_atomic(sidecar_path(a.out), side.dump(2) + "\n");
  log_event("info", "extract", "wrote features", {{"path", a.out}, {"videos", videos.size()}});
  return 0;
}

// ---- fit-pristine ----

struct FitArgs {
  std::vector<std::string> inputs;
  std::string out;
  int patch_size = kDefaultNiqePatch;
  int every = 1;
  int min_patches = 500;
  GeometryFlags geo;
};

int run_fit_pristine(const FitArgs& a) {
  std::vector<Frame> corpus;
  for (const auto& path : a.inputs) {
    const VideoSource src = open_checked(path, a.geo.options());
    for (int t = 0; t < src.frame_count; t += a.every) corpus.push_back(read_luma(src, t));
  }
  log_event("info", "fit-pristine", "corpus loaded", {{"frames", corpus.size()}});
  const PristineModel m = fit_pristine(corpus, a.patch_size, a.min_patches);
  write_atomic(a.out, [&](const std::string& tmp) { save_pristine(tmp, m); });
  json side{{"command", "fit-pristine"},
            {"config", {{"patch_size", a.patch_size}, {"every", a.every}, {"min_patches", a.min_patches},
                        {"geometry", a.geo.to_json()}}},
            {"inputs", a.inputs},
            {"frames", corpus.size()}};
  write_text_atomic(sidecar_path(a.out), side.dump(2) + "\n");
  log_event("info", "fit-pristine", "wrote model", {{"path", a.out}});
  return 0;
}

// ---- train / predict / evaluate ----

struct TrainArgs {
  std::string features;
  std::string mos;
  std::string out;
  std::uint64_t seed = 0;
  int jobs = 0;
  GridFlags grid;
};

struct LabeledData {
  FeatureTable table;
  std::vector<double> y;
};

LabeledData load_labeled(const std::string& features, const std::string& mos) {
  for (const auto& p : {features, mos})
    if (!fs::exists(p)) throw Error(ErrorCode::IoError, "input file not found: '" + p + "'");
  LabeledData d{read_feature_csv(features), {}};
  d.y = align_mos(d.table, read_mos_csv(mos));
  return d;
}

int run_train(const TrainArgs& a) {
  const auto d = load_labeled(a.features, a.mos);
  const TrainConfig cfg = a.grid.config(a.seed, resolve_jobs(a.jobs));
  TrainReport rep;
  const SvrModel m = train(d.table.x, d.y, d.table.content_id, cfg, &rep);
  write_atomic(a.out, [&](const std::string& tmp) { save_model(tmp, m); });
  json grid = json::array();
  for (const auto& g : rep.grid)
    grid.push_back({{"C", g.params.C}, {"gamma", g.params.gamma}, {"epsilon", g.params.epsilon},
                    {"mean_srocc", g.mean_srocc}});
  json side{{"command", "train"},
            {"config", a.grid.to_json(cfg)},
            {"seed", a.seed},
            {"samples", d.y.size()},
            {"selected", grid[rep.best]},
            {"support_vectors", m.support_vectors.size()},
            {"grid", grid}};
  write_text_atomic(sidecar_path(a.out), side.dump(2) + "\n");
  log_event("info", "train", "wrote model", {{"path", a.out}, {"cv_srocc", rep.grid[rep.best].mean_srocc}});
  return 0;
}

struct PredictArgs {
  std::string model;
  std::string features;
  std::string out;
};

int run_predict(const PredictArgs& a) {
  for (const auto& p : {a.model, a.features})
    if (!fs::exists(p)) throw Error(ErrorCode::IoError, "input file not found: '" + p + "'");
  const SvrModel m = load_model(a.model);
  const FeatureTable t = read_feature_csv(a.features);
  std::ostringstream csv;
  csv << "video_id,content_id,score\n";
  for (std::size_t i = 0; i < t.x.size(); ++i)
    csv << t.video_id[i] << ',' << t.content_id[i] << ',' << format_double(predict(m, t.x[i])) << '\n';
  if (a.out.empty()) {
    std::cout << csv.str();
  } else {
    write_text_atomic(a.out, csv.str());
    log_event("info", "predict", "wrote scores", {{"path", a.out}, {"videos", t.x.size()}});
  }
  return 0;
}

struct EvaluateArgs {
  std::string features;
  std::string mos;
  std::string out;
  std::string summary;
  int splits = 1000;
  std::uint64_t seed = 7;
  int jobs = 0;
  GridFlags grid;
};

int run_evaluate(const EvaluateArgs& a) {
  const auto d = load_labeled(a.features, a.mos);
  const int jobs = resolve_jobs(a.jobs);
  const TrainConfig cfg = a.grid.config(a.seed, 1);
  const ProtocolReport rep = run_protocol(d.table.x, d.y, d.table.content_id, a.splits, a.seed, cfg, jobs);
  json j = to_json(rep);
  j["config"] = a.grid.to_json(cfg);
  write_text_atomic(a.out, j.dump(2) + "\n");
  std::string summary = a.summary;
  if (summary.empty()) summary = fs::path(a.out).replace_extension(".csv").string();
  if (summary == a.out) summary += ".csv";
  std::ostringstream csv;
  csv << "metric,median,splits,failed\n";
  csv << "srocc," << format_double(rep.median_srocc) << ',' << rep.splits.size() << ',' << rep.failed << '\n';
  csv << "lcc," << format_double(rep.median_lcc) << ',' << rep.splits.size() << ',' << rep.failed << '\n';
  write_text_atomic(summary, csv.str());
  log_event("info", "evaluate", "done", {{"median_srocc", rep.median_srocc}, {"median_lcc", rep.median_lcc},
                                         {"failed", rep.failed}, {"report", a.out}});
  return 0;
}

// ---- distort ----

struct DistortArgs {
  std::string in;
  std::string out;
  std::string kind;
  int severity = 3;
  std::uint64_t seed = 0;
  GeometryFlags geo;
};

int run_distort(const DistortArgs& a) {
  const VideoSource src = open_checked(a.in, a.geo.options());
  const auto frames = read_all(src);
  const auto out = apply({parse_distortion(a.kind), a.severity, a.seed}, frames);
  const bool y4m = fs::path(a.out).extension() == ".y4m";
  write_atomic(a.out, [&](const std::string& tmp) {
    write_video(tmp, out, src.frame_rate, y4m, src.geometry.format);
  });
  json side{{"command", "distort"},
            {"config", {{"kind", a.kind}, {"severity", a.severity}, {"seed", a.seed}, {"geometry", a.geo.to_json()}}},
            {"input", a.in},
            {"frames", out.size()},
            {"proxy_mos", proxy_mos(a.severity)}};
  write_text_atomic(sidecar_path(a.out), side.dump(2) + "\n");
  log_event("info", "distort", "wrote video", {{"path", a.out}, {"frames", out.size()}});
  return 0;
}

// ---- histdump ----

struct HistArgs {
  std::vector<std::string> inputs;
  std::vector<std::string> labels;
  std::string out;
  std::string pristine;
  std::string flow = "farneback";
  int bins = 101;
  double lo = -4.0;
  double hi = 4.0;
  int t_prime = 5;
  int jobs = 0;
  GeometryFlags geo;
};

// S_T samples of a video, or of a chip dump file (.cqaf).
std::vector<double> chip_samples(const std::string& path, const HistArgs& a, const PristineModel& model,
                                 const FlowEstimator& flow) {
  if (!fs::exists(path)) throw Error(ErrorCode::IoError, "input file not found: '" + path + "'");
  if (fs::path(path).extension() == ".cqaf") {
    const Field f = load_field(path);
    return f.values.storage();
  }
  const VideoSource src = open_checked(path, a.geo.options());
  ExtractConfig cfg;
  cfg.t_prime = a.t_prime;
  cfg.patch = a.t_prime;
  cfg.jobs = resolve_jobs(a.jobs);
  std::vector<double> samples;
  Extractor ex(cfg, model, flow);
  ex.set_chip_sink([&](const ChipFrame& cf) {
    const auto& v = cf.values.storage();
    samples.insert(samples.end(), v.begin(), v.end());
  });
  extract_video(FileFrames(src), model, flow, cfg, &ex);
  return samples;
}

int run_histdump(const HistArgs& a) {
  if (!a.labels.empty() && a.labels.size() != a.inputs.size())
    throw CLI::ValidationError("--label", "give one label per --in");
  if (!(a.hi > a.lo)) throw CLI::ValidationError("--hi", "must exceed --lo");
  PristineModel model;  // only the chip sink is used; the spatial block is discarded
  if (!a.pristine.empty()) model = load_pristine(a.pristine);
  const auto flow = make_flow_estimator(a.flow);

  std::vector<std::vector<double>> samples;
  std::vector<Histogram> hists;
  std::vector<std::string> labels;
  for (std::size_t i = 0; i < a.inputs.size(); ++i) {
    samples.push_back(chip_samples(a.inputs[i], a, model, *flow));
    if (samples.back().empty()) throw Error(ErrorCode::EmptyInput, "no chip samples in '" + a.inputs[i] + "'");
    hists.push_back(make_histogram(samples.back(), a.bins, a.lo, a.hi));
    labels.push_back(a.labels.empty() ? fs::path(a.inputs[i]).stem().string() : a.labels[i]);
  }
  std::ostringstream csv;
  csv << "bin_center";
  for (const auto& l : labels) csv << ',' << l;
  csv << '\n';
  for (int b = 0; b < a.bins; ++b) {
    csv << format_double(hists[0].center(b));
    for (const auto& h : hists) csv << ',' << format_double(h.density[b]);
    csv << '\n';
  }
  write_text_atomic(a.out, csv.str());

  json side{{"command", "histdump"},
            {"config", {{"bins", a.bins}, {"lo", a.lo}, {"hi", a.hi}, {"t_prime", a.t_prime}, {"flow", a.flow}}},
            {"inputs", a.inputs},
            {"labels", labels}};
  json ks = json::array();
  for (std::size_t i = 1; i < samples.size(); ++i) {
    const auto r = ks_two_sample(samples[0], samples[i]);
    ks.push_back({{"reference", labels[0]}, {"other", labels[i]}, {"statistic", r.statistic}, {"p_value", r.p_value}});
  }
  side["ks_vs_first"] = ks;
  json counts = json::array();
  for (const auto& s : samples) counts.push_back(s.size());
  side["samples"] = counts;
  write_text_atomic(sidecar_path(a.out), side.dump(2) + "\n");
  log_event("info", "histdump", "wrote histograms", {{"path", a.out}, {"inputs", a.inputs.size()}});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Space-time chip video quality features and evaluation"};
  app.require_subcommand(1);
  app.set_config("--config", "", "TOML/INI config file; command-line flags override it");

  ExtractArgs ex;
  auto* c_ex = app.add_subcommand("extract", "Extract 109 features per video");
  c_ex->add_option("--in", ex.inputs, "Input .y4m or raw .yuv video (repeatable)")->required();
  c_ex->add_option("--pristine", ex.pristine, "Pristine NIQE model (.niqm)")->required();
  c_ex->add_option("--out", ex.out, "Pooled feature CSV")->required();
  c_ex->add_option("--instants", ex.instants, "Optional per-instant feature CSV");
  c_ex->add_option("--dump-chips", ex.dump_chips, "Directory for per-instant S_T chip dumps (.cqaf)");
  c_ex->add_option("--video-id", ex.video_ids, "Video id (one, or one per --in; default: file stem)");
  c_ex->add_option("--content-id", ex.content_ids, "Content id (one, or one per --in; default: file stem)");
  c_ex->add_option("--flow", ex.flow, "Flow estimator")->check(CLI::IsMember({"farneback", "zero"}))->capture_default_str();
  c_ex->add_option("--t-prime", ex.t_prime, "Chip temporal length T'")->check(CLI::PositiveNumber)->capture_default_str();
  c_ex->add_option("--patch", ex.patch, "Patch size R")->check(CLI::PositiveNumber)->capture_default_str();
  c_ex->add_flag("--allow-unequal", ex.allow_unequal, "Allow R != T'");
  c_ex->add_option("--stride", ex.stride, "Temporal stride between instants")->check(CLI::PositiveNumber)->capture_default_str();
  c_ex->add_option("--niqe-every", ex.niqe_every, "Recompute the spatial block every N instants")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  c_ex->add_option("--jobs", ex.jobs, "Worker threads (default: CHIPQA_NUM_THREADS or 1)")->check(CLI::NonNegativeNumber);
  ex.geo.add(c_ex);

  FitArgs fit;
  auto* c_fit = app.add_subcommand("fit-pristine", "Fit the pristine NIQE model from natural videos");
  c_fit->add_option("--in", fit.inputs, "Pristine video (repeatable)")->required();
  c_fit->add_option("--out", fit.out, "Output model (.niqm)")->required();
  c_fit->add_option("--patch-size", fit.patch_size, "NIQE patch size")->check(CLI::Range(8, 4096))->capture_default_str();
  c_fit->add_option("--every", fit.every, "Use every Nth frame")->check(CLI::PositiveNumber)->capture_default_str();
  c_fit->add_option("--min-patches", fit.min_patches, "Minimum selected patches")->check(CLI::PositiveNumber)->capture_default_str();
  fit.geo.add(c_fit);

  TrainArgs tr;
  auto* c_tr = app.add_subcommand("train", "Train the SVR on pooled features and MOS");
  c_tr->add_option("--features", tr.features, "Feature CSV")->required();
  c_tr->add_option("--mos", tr.mos, "MOS CSV (video_id,mos)")->required();
  c_tr->add_option("--out", tr.out, "Output model (.cqam)")->required();
  c_tr->add_option("--seed", tr.seed, "Fold assignment seed")->capture_default_str();
  c_tr->add_option("--jobs", tr.jobs, "Worker threads")->check(CLI::NonNegativeNumber);
  tr.grid.add(c_tr);

  PredictArgs pr;
  auto* c_pr = app.add_subcommand("predict", "Score feature rows with a trained model");
  c_pr->add_option("--model", pr.model, "Model file (.cqam)")->required();
  c_pr->add_option("--features", pr.features, "Feature CSV")->required();
  c_pr->add_option("--out", pr.out, "Score CSV (default: stdout)");

  EvaluateArgs ev;
  auto* c_ev = app.add_subcommand("evaluate", "Median SROCC/LCC over content-separated random splits");
  c_ev->add_option("--features", ev.features, "Feature CSV")->required();
  c_ev->add_option("--mos", ev.mos, "MOS CSV (video_id,mos)")->required();
  c_ev->add_option("--out", ev.out, "JSON report")->required();
  c_ev->add_option("--summary", ev.summary, "CSV summary (default: report path with .csv)");
  c_ev->add_option("--splits", ev.splits, "Number of splits")->check(CLI::PositiveNumber)->capture_default_str();
  c_ev->add_option("--seed", ev.seed, "Base seed")->capture_default_str();
  c_ev->add_option("--jobs", ev.jobs, "Worker threads")->check(CLI::NonNegativeNumber);
  ev.grid.add(c_ev);

  DistortArgs di;
  auto* c_di = app.add_subcommand("distort", "Apply a synthetic distortion to a video");
  c_di->add_option("--in", di.in, "Source video")->required();
  c_di->add_option("--out", di.out, "Output video (.y4m, otherwise raw planar)")->required();
  c_di->add_option("--kind", di.kind, "Distortion kind")
      ->check(CLI::IsMember({"frame_drop", "judder", "flicker", "blur", "noise", "interlace_sim"}))
      ->required();
  c_di->add_option("--severity", di.severity, "Severity 1..5")->check(CLI::Range(1, 5))->capture_default_str();
  c_di->add_option("--seed", di.seed, "Random seed")->capture_default_str();
  di.geo.add(c_di);

  HistArgs hi;
  auto* c_hi = app.add_subcommand("histdump", "Unit-area histograms of S_T chip samples");
  c_hi->add_option("--in", hi.inputs, "Video or .cqaf chip dump (repeatable; first is the reference)")->required();
  c_hi->add_option("--label", hi.labels, "Column label per input (default: file stem)");
  c_hi->add_option("--out", hi.out, "Histogram CSV")->required();
  c_hi->add_option("--pristine", hi.pristine, "Pristine model (optional; chips do not use it)");
  c_hi->add_option("--flow", hi.flow, "Flow estimator")->check(CLI::IsMember({"farneback", "zero"}))->capture_default_str();
  c_hi->add_option("--bins", hi.bins, "Number of bins")->check(CLI::PositiveNumber)->capture_default_str();
  c_hi->add_option("--lo", hi.lo, "Lower edge")->capture_default_str();
  c_hi->add_option("--hi", hi.hi, "Upper edge")->capture_default_str();
  c_hi->add_option("--t-prime", hi.t_prime, "Chip length")->check(CLI::PositiveNumber)->capture_default_str();
  c_hi->add_option("--jobs", hi.jobs, "Worker threads")->check(CLI::NonNegativeNumber);
  hi.geo.add(c_hi);

  std::string cmd;
  try {
    app.parse(argc, argv);
    cmd = app.get_subcommands().front()->get_name();
    if (cmd == "extract") return run_extract(ex);
    if (cmd == "fit-pristine") return run_fit_pristine(fit);
    if (cmd == "train") return run_train(tr);
    if (cmd == "predict") return run_predict(pr);
    if (cmd == "evaluate") return run_evaluate(ev);
    if (cmd == "distort") return run_distort(di);
    if (cmd == "histdump") return run_histdump(hi);
    return 1;
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    const CLI::App* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    std::cerr << sub->help();
    return 1;
  } catch (const Error& e) {
    const bool usage = e.code() == ErrorCode::InvalidArgument;
    log_event("error", cmd, e.what(), {{"code", to_string(e.code())}});
    return usage ? 1 : 2;
  } catch (const std::exception& e) {
    log_event("error", cmd, e.what());
    return 2;
  }
}
