#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>

#include "helpers.hpp"
#include "mvbev/experiment.hpp"

using namespace mvbev;
using testutil::TempDir;

namespace {

json tiny_config(const fs::path& out) {
  const json rig = {{"image_w", 48}, {"image_h", 32}, {"fx", 30},
                    {"ring", {{"count", 3}, {"radius", 4.0}, {"height", 3.0}, {"center", {1.5, 1.5}}}}};
  return {{"benchmark", "tiny"},
          {"out_dir", out.string()},
          {"seed", 5},
          {"grid", {{"origin_x", 0.0}, {"origin_y", 0.0}, {"cell_size", 0.1}, {"h_g", 30}, {"w_g", 30}}},
          {"scene", {{"area_x", 0.3}, {"area_y", 0.3}, {"area_w", 2.4}, {"area_h", 2.4},
                     {"ped_count_min", 1}, {"ped_count_max", 3}}},
          {"source", {{"frames", 10}, {"seed", 1}, {"rig", rig}}},
          {"target", {{"frames", 10}, {"seed", 2}, {"rig", rig}, {"style", {{"bg_mean", 0.15}}}}},
          {"net", {{"c_feat", 4}}},
          {"train", {{"epochs", 1}, {"max_lr", 1e-4}, {"clip_norm", 100}}},
          {"adapt", {{"epochs", 1}, {"max_lr", 1e-4}, {"clip_norm", 100}, {"k_d", 2}}},
          {"variants", {{"st_only", {{"alpha", 1.0}}}}},
          {"eval", {{"tau_set", {0.2, 0.4}}}}};
}

int run_cli(const std::string& args, const fs::path& stderr_file) {
  const std::string cmd = std::string(MVBEV_CLI) + " " + args + " > /dev/null 2> " + stderr_file.string();
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Config, ParsesBlocksAndDefaults) {
  const auto c = parse_experiment(tiny_config("/tmp/out"));
  EXPECT_EQ(c.benchmark, "tiny");
  EXPECT_EQ(c.grid, (BevGrid{0, 0, 0.1, 30, 30}));
  EXPECT_EQ(c.source.rig.views(), 3);
  EXPECT_EQ(c.source.dir, fs::path("/tmp/out/source"));
  EXPECT_EQ(c.target.style.bg_mean, 0.15);
  EXPECT_EQ(c.net.c_feat, 4);
  EXPECT_DOUBLE_EQ(c.eval_radius_cells(), 5.0);
  EXPECT_DOUBLE_EQ(c.adapt.pseudo.d_cells, 5.0);
  EXPECT_EQ(c.adapt.pseudo.k_d, 2);
  EXPECT_EQ(c.variant("mvuda").alpha, 0.99);
  EXPECT_EQ(c.variant("st_only").alpha, 1.0);
  EXPECT_EQ(c.variant("st_only").pseudo.k_d, 2);
  EXPECT_THROW(c.variant("nope"), ConfigError);
}

TEST(Config, RigSelectAndExplicitCameras) {
  json j = tiny_config("/tmp/out");
  j["source"]["rig"] = {{"image_w", 48}, {"image_h", 32}, {"fx", 30},
                        {"cameras", {{{"position", {0, -3, 3}}, {"look_at", {1.5, 1.5, 0}}},
                                     {{"position", {5, 1, 2}}, {"look_at", {1.5, 1.5, 0}}, {"fx", 40}}}},
                        {"select", {1}}};
  const auto c = parse_experiment(j);
  ASSERT_EQ(c.source.rig.views(), 1);
  EXPECT_EQ(c.source.rig.cameras[0].fx(), 40);
  j["source"]["rig"]["select"] = {2};
  EXPECT_THROW(parse_experiment(j), ConfigError);
}

TEST(Config, RejectsBrokenInput) {
  json j = tiny_config("/tmp/out");
  j.erase("target");
  EXPECT_THROW(parse_experiment(j), ConfigError);
  json k = tiny_config("/tmp/out");
  k["adapt"]["alpha"] = "high";
  EXPECT_THROW(parse_experiment(k), ConfigError);
  EXPECT_THROW(load_experiment("/nonexistent/config.json"), IoError);
}

TEST(MetricsCsv, UpsertReplacesInPlace) {
  TempDir dir("csv");
  const auto path = dir.path / "metrics.csv";
  MetricsRow a{"b:target", "baseline", 0.2, {}}, b{"b:target", "oracle", 0.2, {}};
  a.report.moda = 10;
  b.report.moda = 90;
  upsert_metrics(path, "baseline", {a});
  upsert_metrics(path, "oracle", {b});
  a.report.moda = 20;
  upsert_metrics(path, "baseline", {a, a});
  const auto rows = read_metrics_csv(path);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].method, "baseline");
  EXPECT_EQ(rows[0].report.moda, 20);
  EXPECT_EQ(rows[2].method, "oracle");
  EXPECT_EQ(io::read_text(path).substr(0, std::string(kMetricsHeader).size()), kMetricsHeader);
}

TEST(Pgm, DimensionsFollowTheMap) {
  Tensor<float> m({3, 5}, 0.5f);
  m.at(0, 0) = 2.0f;
  const auto bytes = encode_pgm(m);
  const std::string header = "P5\n5 3\n255\n";
  ASSERT_EQ(bytes.size(), header.size() + 15);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + static_cast<long>(header.size())), header);
  EXPECT_EQ(bytes[header.size()], 255);
  EXPECT_EQ(bytes[header.size() + 1], 128);
}

TEST(Cli, MissingConfigNamesThePath) {
  TempDir dir("cli_missing");
  const auto err = dir.path / "err.txt";
  EXPECT_NE(run_cli("gen --config " + (dir.path / "absent.json").string(), err), 0);
  EXPECT_NE(io::read_text(err).find("absent.json"), std::string::npos);
}

TEST(Cli, AdaptWithoutBaselineFails) {
  TempDir dir("cli_nobase");
  const auto cfg = dir.path / "tiny.json";
  io::write_text(cfg, tiny_config(dir.path / "run").dump());
  const auto err = dir.path / "err.txt";
  ASSERT_EQ(run_cli("gen --config " + cfg.string(), err), 0) << io::read_text(err);
  EXPECT_EQ(run_cli("adapt --config " + cfg.string(), err), 2);
  EXPECT_NE(io::read_text(err).find("baseline.mvp"), std::string::npos) << io::read_text(err);
}

TEST(Cli, FullPipelineProducesArtifacts) {
  TempDir dir("cli_full");
  const auto cfg = dir.path / "tiny.json";
  const auto out = dir.path / "run";
  io::write_text(cfg, tiny_config(out).dump());
  const auto err = dir.path / "err.txt";
  for (const char* cmd : {"gen", "train-baseline", "adapt", "adapt --variant st_only", "oracle", "eval", "report"})
    ASSERT_EQ(run_cli(std::string(cmd) + " --config " + cfg.string(), err), 0) << cmd << ": " << io::read_text(err);

  const auto rows = read_metrics_csv(out / "metrics.csv");
  // Four methods, two splits, two thresholds.
  EXPECT_EQ(rows.size(), 4u * 2u * 2u);
  for (const char* f : {"baseline.mvp", "mvuda.mvp", "st_only.mvp", "oracle.mvp", "mvuda_log.csv",
                        "mvuda_pseudo_counts.csv", "postprocess.csv", "report.txt"})
    EXPECT_TRUE(fs::exists(out / f)) << f;

  const auto report = io::read_text(out / "report.txt");
  const auto best = summarize(rows);
  EXPECT_EQ(static_cast<std::size_t>(std::count(report.begin(), report.end(), '\n')), best.size() + 1);

  const std::string header = "P5\n30 30\n255\n";
  for (const char* f : {"label.pgm", "baseline.pgm", "mvuda.pgm", "oracle.pgm"}) {
    const auto bytes = io::read_bytes(out / "heatmaps" / f);
    ASSERT_EQ(bytes.size(), header.size() + 900) << f;
    EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + static_cast<long>(header.size())), header);
  }

  // Rerunning a stage with the same seed reproduces the metrics bytes.
  const auto before = io::read_bytes(out / "metrics.csv");
  ASSERT_EQ(run_cli("adapt --config " + cfg.string(), err), 0);
  EXPECT_EQ(io::read_bytes(out / "metrics.csv"), before);
}
