#pragma once

// Experiment configuration, dataset resolution, and the train / eval /
// compare / sweep-steps / gen-data drivers behind the command line tool.
//
// Every text output starts with the resolved configuration echoed as
//   # config begin
//   # key = value
//   # config end
// and parse_config() accepts such a file directly, so any output can be used
// to re-run the experiment that produced it.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "metaepi/data.hpp"
#include "metaepi/metalearn.hpp"
#include "metaepi/model.hpp"

namespace metaepi {

struct ExperimentConfig {
  std::string data_bank;  // empty: built-in synthetic desk dataset
  std::string data_labels;
  std::string data_prototypes;
  Algorithm algo = Algorithm::maml;
  SamplerKind sampler = SamplerKind::dynamic;
  std::size_t n_way = 3;
  std::size_t k_shot = 5;
  std::size_t q_query = 5;
  std::size_t tasks_per_episode = 20;
  std::size_t episodes_per_epoch = 10;
  std::size_t epochs = 30;
  std::size_t meta_batch = 1;
  double outer_lr = 1e-4;
  double init_inner_lr = 0.01;
  double reptile_rate = 0.5;
  std::size_t adapter_hidden = 16;
  double blend_ratio = 0.5;
  double logit_scale = 10.0;
  std::size_t inner_steps_train = 1;
  std::size_t inner_steps_test = 1;
  std::uint64_t seed = 0;
  std::size_t eval_tasks = 200;
  std::uint64_t eval_seed = 2024;
  std::string out_dir = "run";

  // Every recognised key, in canonical order.
  static const std::vector<std::string>& keys();

  // Throws ConfigError for unknown keys or unparsable values.
  void set(std::string_view key, std::string_view value);
  std::string get(std::string_view key) const;
  // "key = value" lines for every key.
  std::string render() const;
  // The same lines prefixed "# " between "# config begin" / "# config end".
  std::string render_echo() const;

  // "paper": 20 tasks/episode, 50 episodes/epoch, 100 epochs, outer rate 1e-4,
  // one inner step for training and testing, 3-way 5-shot 5-query.
  void apply_preset(std::string_view name);

  TrainConfig train_config() const;
  AdapterShape adapter_shape(std::size_t dim) const;
  TaskShape task_shape() const { return {n_way, k_shot, q_query}; }
};

// key = value lines, '#' comments, blank lines ignored. If the text holds an
// echoed block, only that block is read.
ExperimentConfig parse_config(std::string_view text, ExperimentConfig base = {});
ExperimentConfig load_config(const std::filesystem::path& path, ExperimentConfig base = {});

// Seed of the built-in synthetic dataset; fixed so every run seed sees the same data.
inline constexpr std::uint64_t kDefaultDataSeed = 1;
inline constexpr double kDefaultTestFraction = 0.3;

struct Dataset {
  EmbeddingBank bank;
  ClassPrototypes prototypes;
  BankSplit split;
};

// Built-in desk data when data_bank is empty; otherwise the EMB1 bank, labels
// and prototypes files, plus "split.csv" next to the labels file when present
// (else a stratified split with kDefaultTestFraction, seed 0).
Dataset load_dataset(const ExperimentConfig& config);
Dataset make_dataset(const SyntheticSpec& spec, double test_fraction = kDefaultTestFraction);

// 6 significant digits, the format of every reported number.
std::string format_number(double value);

// MPAR snapshot: "MPAR" | u32 length | float64 LE values (theta then alpha).
void write_params(const std::filesystem::path& path, const MetaParams& params);
MetaParams read_params(const std::filesystem::path& path, std::size_t theta_length);

std::string format_metrics(const ExperimentConfig& config, const MetricsLog& log);
std::string format_memory_trace(const ExperimentConfig& config, const MetricsLog& log);

struct RunSummary {
  EvalSummary eval;
  double final_train_accuracy = 0.0;  // mean query accuracy over the last epoch
  std::size_t train_steps = 0;
  std::vector<std::string> warnings;
};

std::string format_summary(const ExperimentConfig& config, const MetaParams& params, const RunSummary& summary);

struct TrainOutcome {
  TrainResult train;
  RunSummary summary;
};

// Trains on the dataset's train side and evaluates on a fixture of
// config.eval_tasks test tasks drawn from config.eval_seed. No files written.
TrainOutcome train_and_evaluate(const ExperimentConfig& config, const Dataset& data,
                                const std::vector<Task>& fixture);
std::vector<Task> eval_fixture(const ExperimentConfig& config, const Dataset& data);

// Writes metrics.csv, memory.csv, summary.txt and params.mpar under out_dir.
TrainOutcome run_train(const ExperimentConfig& config);

// Evaluates a snapshot on the fixture with inner_steps_test steps; writes eval.txt.
RunSummary run_eval(const ExperimentConfig& config, const std::filesystem::path& params_path);

struct CompareCell {
  Algorithm algo;
  SamplerKind sampler;
  std::uint64_t seed;
  RunSummary summary;
};

struct CompareReport {
  std::vector<CompareCell> cells;  // configuration-major, seeds in given order
  std::vector<Task> fixture;  // shared by every cell
};

std::string cell_name(Algorithm algo, SamplerKind sampler);
std::pair<Algorithm, SamplerKind> parse_cell_name(std::string_view text);

// Trains every (configuration, seed) cell on identical data and evaluates all
// on one shared fixture. Up to `jobs` cells run concurrently.
CompareReport compare(const ExperimentConfig& base, const std::vector<std::pair<Algorithm, SamplerKind>>& configs,
                      const std::vector<std::uint64_t>& seeds, std::size_t jobs = 1);
std::string format_compare(const ExperimentConfig& base, const CompareReport& report);
// compare() plus compare.csv under out_dir.
CompareReport run_compare(const ExperimentConfig& base,
                          const std::vector<std::pair<Algorithm, SamplerKind>>& configs,
                          const std::vector<std::uint64_t>& seeds, std::size_t jobs = 1);

struct SweepRow {
  std::size_t steps;
  double mean_accuracy;
  double min_class_accuracy;
};

std::vector<SweepRow> sweep_steps(const ExperimentConfig& config, const Dataset& data, const MetaParams& params,
                                  const std::vector<std::size_t>& steps);
std::string format_sweep(const ExperimentConfig& config, const std::vector<SweepRow>& rows);
// Loads the snapshot, sweeps and writes sweep.csv under out_dir.
std::vector<SweepRow> run_sweep_steps(const ExperimentConfig& config, const std::filesystem::path& params_path,
                                      const std::vector<std::size_t>& steps);

struct GenDataOptions {
  SyntheticSpec spec = SyntheticSpec::desk();
  double test_fraction = kDefaultTestFraction;
  std::filesystem::path out_dir = "data";
};

struct GenDataFiles {
  std::filesystem::path bank;
  std::filesystem::path labels;
  std::filesystem::path prototypes;
  std::filesystem::path split;
};

// bank.emb, labels.csv, prototypes.emb and split.csv under out_dir.
GenDataFiles run_gen_data(const GenDataOptions& options);

}  // namespace metaepi
