#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "mvbev/experiment.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Multi-view BEV detection with mean-teacher self-training on synthetic scenes"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  app.add_option("--config", config_path, "experiment config (JSON)")->required();
  app.add_option("--seed", seed, "override the experiment seed");
  app.add_option("--out", out_dir, "override the output directory");

  auto* gen = app.add_subcommand("gen", "generate source and target datasets");
  auto* base = app.add_subcommand("train-baseline", "supervised training on the source domain");
  auto* adapt = app.add_subcommand("adapt", "self-training from the baseline checkpoint");
  std::string variant = "mvuda";
  adapt->add_option("--variant", variant, "adaptation variant from the config");
  auto* oracle = app.add_subcommand("oracle", "supervised training on target labels");
  auto* eval = app.add_subcommand("eval", "compare post-processing functions on the baseline");
  auto* report = app.add_subcommand("report", "best-threshold table and heatmaps");

  CLI11_PARSE(app, argc, argv);

  try {
    std::optional<mvbev::fs::path> out;
    if (out_dir) out = *out_dir;
    const auto cfg = mvbev::load_experiment(config_path, seed, out);
    if (gen->parsed()) {
      mvbev::cmd_gen(cfg, std::cout);
      return 0;
    }
    mvbev::Session session(cfg);
    if (base->parsed()) mvbev::cmd_train_baseline(session, std::cout);
    else if (adapt->parsed()) mvbev::cmd_adapt(session, variant, std::cout);
    else if (oracle->parsed()) mvbev::cmd_oracle(session, std::cout);
    else if (eval->parsed()) mvbev::cmd_eval(session, std::cout);
    else if (report->parsed()) mvbev::cmd_report(session, std::cout);
  } catch (const mvbev::Error& e) {
    std::cerr << "mvbev: " << e.kind() << ": " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "mvbev: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
