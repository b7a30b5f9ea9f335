// metaepi: command line front end for data generation, meta-training,
// evaluation, sampler/algorithm comparison and adaptation-step sweeps.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "metaepi/harness.hpp"

namespace {

using metaepi::ExperimentConfig;

// --config FILE, --preset NAME and one --<key> flag per config key.
struct ConfigFlags {
  std::string config_file;
  std::string preset;
  std::map<std::string, std::string> overrides;

  void attach(CLI::App& app) {
    app.add_option("--config", config_file, "key = value config file (or any output with an echoed config)");
    app.add_option("--preset", preset, "paper | desk");
    for (const auto& key : ExperimentConfig::keys()) {
      app.add_option("--" + key, overrides[key], "config key " + key);
    }
  }

  // defaults <- config file <- preset <- flags
  ExperimentConfig resolve(const CLI::App& app) const {
    ExperimentConfig c;
    if (!config_file.empty()) c = metaepi::load_config(config_file, c);
    if (!preset.empty()) c.apply_preset(preset);
    for (const auto& key : ExperimentConfig::keys()) {
      if (app.count("--" + key) > 0) c.set(key, overrides.at(key));
    }
    return c;
  }
};

std::filesystem::path params_or_default(const std::string& flag, const ExperimentConfig& c) {
  return flag.empty() ? std::filesystem::path(c.out_dir) / "params.mpar" : std::filesystem::path(flag);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Meta-episodic few-shot adapter training with dynamic task sampling"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Write a synthetic embedding bank, labels, prototypes and split");
  metaepi::GenDataOptions gen_opts;
  std::size_t hard_classes = 3;
  int hard_modes = 3;
  double hard_spread = 0.6;
  double easy_spread = 0.1;
  std::string gen_out = "data";
  gen->add_option("--classes", gen_opts.spec.classes, "number of classes")->capture_default_str();
  gen->add_option("--dim", gen_opts.spec.dim, "embedding dimension (>= classes)")->capture_default_str();
  gen->add_option("--hard-classes", hard_classes, "classes 0..k-1 are hard")->capture_default_str();
  gen->add_option("--hard-modes", hard_modes, "modes per hard class")->capture_default_str();
  gen->add_option("--hard-spread", hard_spread, "spread of hard classes")->capture_default_str();
  gen->add_option("--easy-spread", easy_spread, "spread of easy classes")->capture_default_str();
  gen->add_option("--separation", gen_opts.spec.separation, "mode distance from class anchor")
      ->capture_default_str();
  gen->add_option("--per-class", gen_opts.spec.per_class, "rows per class")->capture_default_str();
  gen->add_option("--seed", gen_opts.spec.seed, "generator seed")->capture_default_str();
  gen->add_option("--test-fraction", gen_opts.test_fraction, "per-class test share")->capture_default_str();
  gen->add_option("--out-dir", gen_out, "output directory")->capture_default_str();

  // train / eval / compare / sweep-steps share the config flags
  auto* train = app.add_subcommand("train", "Meta-train and write metrics, summary and parameter snapshot");
  ConfigFlags train_flags;
  train_flags.attach(*train);

  auto* eval = app.add_subcommand("eval", "Evaluate a parameter snapshot on the fixed test tasks");
  ConfigFlags eval_flags;
  eval_flags.attach(*eval);
  std::string eval_params;
  eval->add_option("--params", eval_params, "MPAR snapshot (default <out_dir>/params.mpar)");

  auto* cmp = app.add_subcommand("compare", "Train algorithm:sampler configurations over seeds and compare");
  ConfigFlags cmp_flags;
  cmp_flags.attach(*cmp);
  std::vector<std::string> cmp_configs{"maml:dynamic", "maml:random"};
  std::vector<std::uint64_t> cmp_seeds{0, 1, 2, 3, 4};
  std::size_t jobs = 1;
  cmp->add_option("--configs", cmp_configs, "algo:sampler list")->delimiter(',')->capture_default_str();
  cmp->add_option("--seeds", cmp_seeds, "seed list")->delimiter(',')->capture_default_str();
  cmp->add_option("--jobs", jobs, "cells trained concurrently")->capture_default_str();

  auto* sweep = app.add_subcommand("sweep-steps", "Accuracy against number of test-time adaptation steps");
  ConfigFlags sweep_flags;
  sweep_flags.attach(*sweep);
  std::string sweep_params;
  std::vector<std::size_t> steps{1, 2, 3, 4, 5};
  sweep->add_option("--params", sweep_params, "MPAR snapshot (default <out_dir>/params.mpar)");
  sweep->add_option("--steps", steps, "adaptation step counts")->delimiter(',')->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      auto& spec = gen_opts.spec;
      spec.modes.assign(spec.classes, 1);
      spec.spreads.assign(spec.classes, easy_spread);
      for (std::size_t c = 0; c < std::min(hard_classes, spec.classes); ++c) {
        spec.modes[c] = hard_modes;
        spec.spreads[c] = hard_spread;
      }
      gen_opts.out_dir = gen_out;
      const auto files = metaepi::run_gen_data(gen_opts);
      std::cout << files.bank.string() << "\n"
                << files.labels.string() << "\n"
                << files.prototypes.string() << "\n"
                << files.split.string() << "\n";
    } else if (*train) {
      const auto config = train_flags.resolve(*train);
      const auto out = metaepi::run_train(config);
      for (const auto& w : out.summary.warnings) std::cerr << "warning: " << w << "\n";
      std::cout << "overall_acc = " << metaepi::format_number(out.summary.eval.overall_accuracy) << "\n"
                << "min_class_acc = " << metaepi::format_number(out.summary.eval.min_class_accuracy) << "\n"
                << "outputs in " << config.out_dir << "\n";
    } else if (*eval) {
      const auto config = eval_flags.resolve(*eval);
      const auto s = metaepi::run_eval(config, params_or_default(eval_params, config));
      std::cout << "overall_acc = " << metaepi::format_number(s.eval.overall_accuracy) << "\n"
                << "min_class_acc = " << metaepi::format_number(s.eval.min_class_accuracy) << "\n";
    } else if (*cmp) {
      const auto config = cmp_flags.resolve(*cmp);
      std::vector<std::pair<metaepi::Algorithm, metaepi::SamplerKind>> cells;
      for (const auto& name : cmp_configs) cells.push_back(metaepi::parse_cell_name(name));
      const auto report = metaepi::run_compare(config, cells, cmp_seeds, jobs);
      std::cout << metaepi::format_compare(config, report);
    } else if (*sweep) {
      const auto config = sweep_flags.resolve(*sweep);
      const auto rows = metaepi::run_sweep_steps(config, params_or_default(sweep_params, config), steps);
      std::cout << metaepi::format_sweep(config, rows);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
