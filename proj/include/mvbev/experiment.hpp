#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <numbers>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "mvbev/error.hpp"
#include "mvbev/evalmetrics.hpp"
#include "mvbev/io.hpp"
#include "mvbev/losses.hpp"
#include "mvbev/pseudolabel.hpp"
#include "mvbev/selftrain.hpp"
#include "mvbev/synthworld.hpp"
#include "mvbev/tinynet.hpp"

namespace mvbev {

namespace fs = std::filesystem;
using io::json;

// ---------------------------------------------------------------------------
// Configuration

struct DomainSpec {
  fs::path dir;
  int frames = 100;
  std::uint64_t seed = 0;
  SceneConfig scene;
  RigConfig rig;
  DomainStyle style;
};

struct ExperimentConfig {
  std::string benchmark = "benchmark";
  fs::path out_dir = "runs";
  std::uint64_t seed = 0;
  BevGrid grid{0.0, 0.0, 0.1, 60, 60};
  DomainSpec source, target;
  NetConfig net;
  TrainConfig train;
  AdaptConfig adapt;
  std::map<std::string, AdaptConfig> variants;  // "mvuda" is always present
  std::vector<double> tau_set = default_tau_set();
  double eval_radius_m = 0.5;

  double eval_radius_cells() const { return eval_radius_m / grid.cell_size; }
  fs::path path(const std::string& name) const { return out_dir / name; }
  const AdaptConfig& variant(const std::string& name) const {
    auto it = variants.find(name);
    if (it == variants.end()) throw ConfigError("unknown adaptation variant '" + name + "'");
    return it->second;
  }
};

namespace config_detail {

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("field '") + key + "': " + e.what());
  }
}

inline Eigen::Vector3d vec3(const json& j, const char* what) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != 3) throw ConfigError(std::string(what) + " needs 3 numbers");
  return {v[0], v[1], v[2]};
}

inline SceneConfig parse_scene(const json& j, SceneConfig s) {
  read(j, "area_x", s.area_x);
  read(j, "area_y", s.area_y);
  read(j, "area_w", s.area_w);
  read(j, "area_h", s.area_h);
  read(j, "ped_count_min", s.ped_count_min);
  read(j, "ped_count_max", s.ped_count_max);
  read(j, "ped_radius", s.ped_radius);
  read(j, "ped_height", s.ped_height);
  read(j, "min_separation", s.min_separation);
  s.validate();
  return s;
}

inline DomainStyle parse_style(const json& j) {
  DomainStyle s;
  read(j, "bg_mean", s.bg_mean);
  read(j, "bg_noise_std", s.bg_noise_std);
  read(j, "ped_intensity_min", s.ped_intensity_min);
  read(j, "ped_intensity_max", s.ped_intensity_max);
  read(j, "gain", s.gain);
  read(j, "bias", s.bias);
  read(j, "texture_seed", s.texture_seed);
  return s;
}

/// Cameras come from explicit "calibrations", a "cameras" list of look-at
/// poses, or a "ring" of look-at cameras; "select" keeps a subset by index.
inline RigConfig parse_rig(const json& j) {
  RigConfig rig;
  try {
    rig.image_w = j.at("image_w").get<int>();
    rig.image_h = j.at("image_h").get<int>();
    if (j.contains("calibrations")) {
      for (const auto& c : j.at("calibrations")) rig.cameras.push_back(io::calibration_from_json(c));
    } else {
      const double fx = j.at("fx").get<double>();
      const double fy = j.contains("fy") ? j.at("fy").get<double>() : fx;
      const double cx = rig.image_w / 2.0, cy = rig.image_h / 2.0;
      if (j.contains("cameras")) {
        for (const auto& c : j.at("cameras")) {
          const double cfx = c.contains("fx") ? c.at("fx").get<double>() : fx;
          const double cfy = c.contains("fy") ? c.at("fy").get<double>() : cfx * fy / fx;
          rig.cameras.push_back(CameraCalibration::look_at(vec3(c.at("position"), "position"),
                                                           vec3(c.at("look_at"), "look_at"), cfx,
                                                           cfy, cx, cy, rig.image_w, rig.image_h));
        }
      } else {
        const auto& r = j.at("ring");
        const int count = r.at("count").get<int>();
        const double radius = r.at("radius").get<double>();
        const double height = r.at("height").get<double>();
        const auto center = r.at("center").get<std::vector<double>>();
        const double offset = r.contains("offset_deg") ? r.at("offset_deg").get<double>() : 0.0;
        for (int k = 0; k < count; ++k) {
          const double a = (offset + 360.0 * k / count) * std::numbers::pi / 180.0;
          const Eigen::Vector3d pos(center.at(0) + radius * std::cos(a),
                                    center.at(1) + radius * std::sin(a), height);
          rig.cameras.push_back(CameraCalibration::look_at(
              pos, {center.at(0), center.at(1), 0.0}, fx, fy, cx, cy, rig.image_w, rig.image_h));
        }
      }
    }
    if (j.contains("select")) {
      std::vector<CameraCalibration> subset;
      for (int k : j.at("select").get<std::vector<int>>()) {
        if (k < 0 || k >= static_cast<int>(rig.cameras.size()))
          throw ConfigError("rig.select index " + std::to_string(k) + " out of range");
        subset.push_back(rig.cameras[static_cast<std::size_t>(k)]);
      }
      rig.cameras = std::move(subset);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("rig: ") + e.what());
  }
  rig.validate();
  return rig;
}

inline AugmentationSpec parse_aug(const json& j, AugmentationSpec a) {
  read(j, "dropview_prob", a.dropview_prob);
  read(j, "occluder_count_min", a.occluder_count_min);
  read(j, "occluder_count_max", a.occluder_count_max);
  read(j, "occluder_width_min", a.occluder_width_min);
  read(j, "occluder_width_max", a.occluder_width_max);
  read(j, "occluder_height_min", a.occluder_height_min);
  read(j, "occluder_height_max", a.occluder_height_max);
  read(j, "occluder_intensity_min", a.occluder_intensity_min);
  read(j, "occluder_intensity_max", a.occluder_intensity_max);
  a.validate();
  return a;
}

inline AdaptConfig parse_adapt(const json& j, AdaptConfig a) {
  read(j, "alpha", a.alpha);
  read(j, "lambda", a.lambda);
  read(j, "epochs", a.epochs);
  read(j, "max_lr", a.max_lr);
  read(j, "momentum", a.sgd.momentum);
  read(j, "weight_decay", a.sgd.weight_decay);
  read(j, "clip_norm", a.sgd.clip_norm);
  read(j, "sigma", a.sigma);
  read(j, "sigma_px", a.sigma_px);
  read(j, "patience", a.patience);
  read(j, "perspective", a.use_perspective_supervision);
  read(j, "tau", a.pseudo.tau);
  read(j, "k_d", a.pseudo.k_d);
  read(j, "d_cells", a.pseudo.d_cells);
  if (j.contains("method")) a.pseudo.method = parse_method(j.at("method").get<std::string>());
  if (j.contains("aug")) a.aug = parse_aug(j.at("aug"), a.aug);
  a.validate();
  return a;
}

inline DomainSpec parse_domain(const json& j, const SceneConfig& scene_defaults,
                               const char* default_dir) {
  DomainSpec d;
  d.dir = default_dir;
  if (j.contains("dir")) d.dir = j.at("dir").get<std::string>();
  read(j, "frames", d.frames);
  read(j, "seed", d.seed);
  d.scene = parse_scene(j.contains("scene") ? j.at("scene") : json::object(), scene_defaults);
  if (!j.contains("rig")) throw ConfigError(std::string(default_dir) + ": missing rig block");
  d.rig = parse_rig(j.at("rig"));
  if (j.contains("style")) d.style = parse_style(j.at("style"));
  return d;
}

}  // namespace config_detail

/// Builds an ExperimentConfig from its JSON form. Relative dataset
/// directories resolve against the output directory.
inline ExperimentConfig parse_experiment(const json& j) {
  using namespace config_detail;
  if (!j.is_object()) throw ConfigError("config root must be an object");
  ExperimentConfig c;
  read(j, "benchmark", c.benchmark);
  if (j.contains("out_dir")) c.out_dir = j.at("out_dir").get<std::string>();
  read(j, "seed", c.seed);
  if (j.contains("grid")) {
    try {
      c.grid = io::grid_from_json(j.at("grid"));
    } catch (const Error& e) {
      throw ConfigError(e.what());
    }
  }
  const SceneConfig scene = parse_scene(j.contains("scene") ? j.at("scene") : json::object(), {});
  if (!j.contains("source") || !j.contains("target"))
    throw ConfigError("config needs source and target blocks");
  c.source = parse_domain(j.at("source"), scene, "source");
  c.target = parse_domain(j.at("target"), scene, "target");
  if (j.contains("net")) {
    read(j.at("net"), "c_feat", c.net.c_feat);
    read(j.at("net"), "output_bias_init", c.net.output_bias_init);
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    read(t, "epochs", c.train.epochs);
    read(t, "max_lr", c.train.max_lr);
    read(t, "momentum", c.train.sgd.momentum);
    read(t, "weight_decay", c.train.sgd.weight_decay);
    read(t, "clip_norm", c.train.sgd.clip_norm);
    read(t, "sigma", c.train.sigma);
    read(t, "sigma_px", c.train.sigma_px);
    read(t, "perspective", c.train.use_perspective_supervision);
    if (t.contains("aug")) c.train.aug = parse_aug(t.at("aug"), c.train.aug);
  }
  c.train.ped_height = c.source.scene.ped_height;
  c.adapt.sigma = c.train.sigma;
  c.adapt.sigma_px = c.train.sigma_px;
  c.adapt.pseudo.d_cells = 0.5 / c.grid.cell_size;
  if (j.contains("adapt")) c.adapt = parse_adapt(j.at("adapt"), c.adapt);
  c.adapt.ped_height = c.target.scene.ped_height;
  c.variants["mvuda"] = c.adapt;
  if (j.contains("variants"))
    for (const auto& [name, v] : j.at("variants").items()) c.variants[name] = parse_adapt(v, c.adapt);
  if (j.contains("eval")) {
    read(j.at("eval"), "tau_set", c.tau_set);
    read(j.at("eval"), "radius_m", c.eval_radius_m);
  }
  if (c.tau_set.empty()) throw ConfigError("eval.tau_set must not be empty");
  if (c.source.dir.is_relative()) c.source.dir = c.out_dir / c.source.dir;
  if (c.target.dir.is_relative()) c.target.dir = c.out_dir / c.target.dir;
  return c;
}

inline ExperimentConfig load_experiment(const fs::path& path,
                                        std::optional<std::uint64_t> seed_override = {},
                                        std::optional<fs::path> out_override = {}) {
  if (!fs::exists(path)) throw IoError("config file not found: " + path.string());
  json j;
  try {
    j = json::parse(io::read_text(path));
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  if (out_override) j["out_dir"] = out_override->string();
  ExperimentConfig c = parse_experiment(j);
  if (seed_override) c.seed = *seed_override;
  return c;
}

// ---------------------------------------------------------------------------
// Metrics CSV: benchmark, method, tau, moda, modp, precision, recall

struct MetricsRow {
  std::string benchmark, method;
  double tau = 0.0;
  MetricsReport report;
};

inline std::string format_row(const MetricsRow& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%s,%s,%.2f,%.4f,%.4f,%.4f,%.4f", r.benchmark.c_str(),
                r.method.c_str(), r.tau, r.report.moda, r.report.modp, r.report.precision,
                r.report.recall);
  return buf;
}

inline constexpr const char* kMetricsHeader = "benchmark,method,tau,moda,modp,precision,recall";

inline std::vector<MetricsRow> read_metrics_csv(const fs::path& path) {
  std::vector<MetricsRow> rows;
  if (!fs::exists(path)) return rows;
  std::istringstream in(io::read_text(path));
  std::string line;
  std::getline(in, line);
  if (line != kMetricsHeader) throw CorruptDataset(path.string() + ": unexpected header");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (f.size() != 7) throw CorruptDataset(path.string() + ": malformed row '" + line + "'");
    MetricsRow r;
    r.benchmark = f[0];
    r.method = f[1];
    try {
      r.tau = std::stod(f[2]);
      r.report.moda = std::stod(f[3]);
      r.report.modp = std::stod(f[4]);
      r.report.precision = std::stod(f[5]);
      r.report.recall = std::stod(f[6]);
    } catch (const std::exception&) {
      throw CorruptDataset(path.string() + ": non-numeric field in '" + line + "'");
    }
    rows.push_back(r);
  }
  return rows;
}

/// Replaces the rows of `method` (keeping their position) or appends them.
inline void upsert_metrics(const fs::path& path, const std::string& method,
                           const std::vector<MetricsRow>& fresh) {
  auto rows = read_metrics_csv(path);
  std::vector<MetricsRow> merged;
  bool inserted = false;
  for (const auto& r : rows) {
    if (r.method == method) {
      if (!inserted) merged.insert(merged.end(), fresh.begin(), fresh.end());
      inserted = true;
    } else {
      merged.push_back(r);
    }
  }
  if (!inserted) merged.insert(merged.end(), fresh.begin(), fresh.end());
  std::ostringstream os;
  os << kMetricsHeader << "\n";
  for (const auto& r : merged) os << format_row(r) << "\n";
  io::write_text(path, os.str());
}

inline std::vector<MetricsRow> sweep_rows(const std::string& benchmark, const std::string& method,
                                          const SweepResult& s) {
  std::vector<MetricsRow> rows;
  for (const auto& [tau, rep] : s.per_tau) rows.push_back({benchmark, method, tau, rep});
  return rows;
}

// ---------------------------------------------------------------------------
// Experiment session: loaded datasets + tables

struct Session {
  ExperimentConfig cfg;
  Dataset source, target, target_unlabeled;
  DomainData src, tgt, tgt_unlabeled;

  explicit Session(ExperimentConfig c) : cfg(std::move(c)) {
    source = load_dataset(cfg.source.dir, true);
    target = load_dataset(cfg.target.dir, true);
    target_unlabeled = load_dataset(cfg.target.dir, false);
    if (source.grid != target.grid) throw ConfigError("source and target grids differ");
    src = DomainData(cfg.net, source);
    tgt = DomainData(cfg.net, target);
    tgt_unlabeled = DomainData(cfg.net, target_unlabeled);
  }
  Session(const Session&) = delete;
  Session& operator=(const Session&) = delete;

  PostprocessConfig eval_post(PostprocessMethod m = PostprocessMethod::Vanilla) const {
    return {m, 0.5, cfg.eval_radius_cells(), cfg.adapt.pseudo.k_d};
  }

  SweepResult evaluate(const ParameterSet<float>& p, bool on_target,
                       PostprocessMethod m = PostprocessMethod::Vanilla) const {
    const auto& dom = on_target ? tgt : src;
    return sweep_tau(cfg.net, p, *dom.data, dom.data->test, dom.tables, eval_post(m), cfg.tau_set,
                     cfg.eval_radius_cells());
  }

  /// Target + source rows (target first) for one checkpoint.
  std::vector<MetricsRow> metric_rows(const std::string& method, const ParameterSet<float>& p) const {
    auto rows = sweep_rows(cfg.benchmark + ":target", method, evaluate(p, true));
    auto srows = sweep_rows(cfg.benchmark + ":source", method, evaluate(p, false));
    rows.insert(rows.end(), srows.begin(), srows.end());
    return rows;
  }
};

inline void write_step_log(const fs::path& path, const std::vector<StepLog>& logs) {
  std::ostringstream os;
  os << "step,lr,loss_src,loss_tgt,n_pseudo_labels,grad_norm\n";
  char buf[160];
  for (const auto& l : logs) {
    std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g,%zu,%.6g\n", l.step, l.lr, l.loss_src,
                  l.loss_tgt, l.pseudo_labels.size(), l.grad_norm);
    os << buf;
  }
  io::write_text(path, os.str());
}

/// Keeps only what the run log needs, so long runs do not hold every map.
inline StepLog slim(const StepLog& l) {
  StepLog s;
  s.step = l.step;
  s.lr = l.lr;
  s.loss_src = l.loss_src;
  s.loss_tgt = l.loss_tgt;
  s.loss_total = l.loss_total;
  s.grad_norm = l.grad_norm;
  s.target_frame = l.target_frame;
  s.pseudo_labels = l.pseudo_labels;
  return s;
}

inline double best_moda(const std::vector<MetricsRow>& rows, const std::string& benchmark) {
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& r : rows)
    if (r.benchmark == benchmark) best = std::max(best, r.report.moda);
  return best;
}

// ---------------------------------------------------------------------------
// Commands. Each writes its artifacts under cfg.out_dir and reports to `os`.

inline void cmd_gen(const ExperimentConfig& cfg, std::ostream& os) {
  for (const auto* d : {&cfg.source, &cfg.target}) {
    const auto m = generate_dataset(d->scene, d->rig, d->style, cfg.grid, d->seed, d->frames, d->dir);
    os << "generated " << d->dir.string() << ": " << m.n_frames << " frames, " << m.n_views
       << " views, " << m.train.size() << " train / " << m.test.size() << " test\n";
  }
}

inline ParameterSet<float> train_supervised_cmd(Session& s, const std::string& method,
                                                bool on_target, std::ostream& os) {
  const auto& cfg = s.cfg;
  const DomainData& dom = on_target ? s.tgt : s.src;
  if (dom.data->train.empty()) throw EmptyDataset("no training frames in " +
                                                  (on_target ? cfg.target.dir : cfg.source.dir).string());
  std::vector<StepLog> logs;
  const std::uint64_t seed = on_target ? derive_seed(cfg.seed, {0x04ac1e}) : cfg.seed;
  auto out = supervised_train(cfg.net, init_parameters<float>(cfg.net, seed), dom,
                              dom.data->train, dom.data->test, cfg.train, seed,
                              [&](const StepLog& l) { logs.push_back(slim(l)); });
  fs::create_directories(cfg.out_dir);
  save_checkpoint(cfg.path(method + ".mvp"), out.best);
  write_step_log(cfg.path(method + "_log.csv"), logs);
  const auto rows = s.metric_rows(method, out.best);
  upsert_metrics(cfg.path("metrics.csv"), method, rows);
  os << method << ": best epoch " << out.best_epoch << ", target MODA "
     << best_moda(rows, cfg.benchmark + ":target") << ", source MODA "
     << best_moda(rows, cfg.benchmark + ":source") << "\n";
  return out.best;
}

inline ParameterSet<float> cmd_train_baseline(Session& s, std::ostream& os) {
  return train_supervised_cmd(s, "baseline", false, os);
}

inline ParameterSet<float> cmd_oracle(Session& s, std::ostream& os) {
  return train_supervised_cmd(s, "oracle", true, os);
}

struct AdaptRun {
  ParameterSet<float> params;
  TrainOutcome outcome;
  std::vector<StepLog> logs;
  std::vector<MetricsRow> rows;
};

/// Self-training from the saved baseline; `variant` names an entry of
/// cfg.variants and doubles as the method tag.
inline AdaptRun cmd_adapt(Session& s, const std::string& variant, std::ostream& os) {
  const auto& cfg = s.cfg;
  const AdaptConfig& acfg = cfg.variant(variant);
  const fs::path base_path = cfg.path("baseline.mvp");
  if (!fs::exists(base_path)) throw IoError("baseline checkpoint not found: " + base_path.string());
  const auto baseline = load_checkpoint(base_path);
  AdaptRun run;
  run.outcome = adapt(
      cfg.net, baseline, s.src, s.tgt_unlabeled, acfg, derive_seed(cfg.seed, {0xada97}),
      [&](const StepLog& l) { run.logs.push_back(slim(l)); },
      [&](int epoch, const ParameterSet<float>& p) {
        save_checkpoint(cfg.path(variant + "_epoch" + std::to_string(epoch) + ".mvp"), p);
      });
  run.params = run.outcome.best;
  save_checkpoint(cfg.path(variant + ".mvp"), run.params);
  write_step_log(cfg.path(variant + "_log.csv"), run.logs);
  std::ostringstream counts;
  counts << "epoch,n_pseudo_labels\n";
  for (std::size_t e = 0; e < run.outcome.pseudo_label_counts.size(); ++e)
    counts << e << "," << run.outcome.pseudo_label_counts[e] << "\n";
  io::write_text(cfg.path(variant + "_pseudo_counts.csv"), counts.str());
  run.rows = s.metric_rows(variant, run.params);
  upsert_metrics(cfg.path("metrics.csv"), variant, run.rows);
  os << variant << ": epochs run " << run.outcome.epochs_run << ", best epoch "
     << run.outcome.best_epoch << ", target MODA " << best_moda(run.rows, cfg.benchmark + ":target")
     << "\n";
  return run;
}

/// Baseline evaluated with both post-processing functions on the target
/// test split; written to postprocess.csv (method = baseline/<function>).
inline std::vector<MetricsRow> cmd_eval(Session& s, std::ostream& os) {
  const auto& cfg = s.cfg;
  const auto baseline = load_checkpoint(cfg.path("baseline.mvp"));
  std::vector<MetricsRow> rows;
  for (auto m : {PostprocessMethod::Vanilla, PostprocessMethod::LocalMax}) {
    auto r = sweep_rows(cfg.benchmark + ":target", std::string("baseline/") + method_name(m),
                        s.evaluate(baseline, true, m));
    rows.insert(rows.end(), r.begin(), r.end());
  }
  std::ostringstream out;
  out << kMetricsHeader << "\n";
  for (const auto& r : rows) out << format_row(r) << "\n";
  io::write_text(cfg.path("postprocess.csv"), out.str());
  os << "wrote " << cfg.path("postprocess.csv").string() << " (" << rows.size() << " rows)\n";
  return rows;
}

/// 8-bit binary PGM of a map with values in [0, 1].
inline std::vector<std::uint8_t> encode_pgm(const Tensor<float>& map) {
  const int H = map.dim(0), W = map.dim(1);
  const std::string header = "P5\n" + std::to_string(W) + " " + std::to_string(H) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  for (float v : map.vec())
    out.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)));
  return out;
}

/// Best-τ summary per (benchmark split, method); each line is one CSV row.
inline std::vector<MetricsRow> summarize(const std::vector<MetricsRow>& rows) {
  std::vector<MetricsRow> best;
  for (const auto& r : rows) {
    auto it = std::find_if(best.begin(), best.end(), [&](const MetricsRow& b) {
      return b.benchmark == r.benchmark && b.method == r.method;
    });
    if (it == best.end())
      best.push_back(r);
    else if (r.report.moda > it->report.moda)
      *it = r;
  }
  return best;
}

inline std::string cmd_report(Session& s, std::ostream& os) {
  const auto& cfg = s.cfg;
  const auto rows = read_metrics_csv(cfg.path("metrics.csv"));
  if (rows.empty()) throw IoError("no metrics rows in " + cfg.path("metrics.csv").string());
  std::ostringstream t;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-24s %-12s %6s %9s %9s %9s %9s\n", "benchmark", "method", "tau",
                "MODA", "MODP", "precision", "recall");
  t << buf;
  for (const auto& r : summarize(rows)) {
    std::snprintf(buf, sizeof buf, "%-24s %-12s %6.2f %9.4f %9.4f %9.4f %9.4f\n",
                  r.benchmark.c_str(), r.method.c_str(), r.tau, r.report.moda, r.report.modp,
                  r.report.precision, r.report.recall);
    t << buf;
  }
  io::write_text(cfg.path("report.txt"), t.str());

  const fs::path heat = cfg.path("heatmaps");
  fs::create_directories(heat);
  if (!s.target.test.empty()) {
    const auto& f = s.target.frames.at(static_cast<std::size_t>(s.target.test.front()));
    if (f.gt)
      io::write_bytes(heat / "label.pgm",
                      encode_pgm(gaussian_soft_target<float>(*f.gt, cfg.train.sigma, s.target.grid)));
    std::vector<std::string> methods;
    for (const auto& r : rows)
      if (std::find(methods.begin(), methods.end(), r.method) == methods.end())
        methods.push_back(r.method);
    for (const auto& m : methods) {
      const fs::path ck = cfg.path(m + ".mvp");
      if (!fs::exists(ck)) continue;
      const auto res = forward<float>(cfg.net, load_checkpoint(ck),
                                      std::span<const Tensor<float>>(f.views), s.tgt.tables);
      io::write_bytes(heat / (m + ".pgm"), encode_pgm(res.occupancy));
    }
  }
  os << t.str();
  return t.str();
}

}  // namespace mvbev
