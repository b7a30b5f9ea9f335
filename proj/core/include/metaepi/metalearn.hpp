#pragma once

// Bi-level optimizers over a differentiable objective: one-step second-order
// MAML with a meta-learned inner rate, its first-order variant, Reptile,
// MetaSGD (per-parameter inner rates) and the Adam meta-optimizer, plus the
// episodic training loop and test-time adaptation.

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "metaepi/diffcore.hpp"
#include "metaepi/episodic.hpp"
#include "metaepi/model.hpp"

namespace metaepi {

enum class Algorithm { maml, fomaml, reptile, metasgd };

std::string_view to_string(Algorithm algorithm);
Algorithm parse_algorithm(std::string_view text);

// Adapter parameters plus the inner learning rate. `alpha` holds one entry
// (shared rate) or one entry per parameter.
struct MetaParams {
  Vector theta;
  Vector alpha;

  bool per_parameter() const noexcept { return alpha.size() != 1; }
  double alpha_at(std::size_t j) const { return per_parameter() ? alpha[j] : alpha[0]; }
  void validate() const;

  friend bool operator==(const MetaParams&, const MetaParams&) = default;
};

struct MetaGradient {
  Vector d_theta;
  Vector d_alpha;  // same shape as MetaParams::alpha
};

struct AdamState {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  Vector first_moment;   // over theta followed by alpha
  Vector second_moment;
  std::int64_t step = 0;

  static AdamState for_params(const MetaParams& params, double learning_rate);
};

struct TaskResult {
  Vector adapted;
  double inner_loss = 0.0;  // at the unadapted parameters on the support set
  double outer_loss = 0.0;  // at the adapted parameters on the query set
  std::map<int, double> per_class_accuracy;  // global class id -> query accuracy
  double query_accuracy = 0.0;
};

// theta <- theta - alpha (.) grad L(theta; support), `steps` times.
Vector inner_adapt(const MetaParams& params, const Objective& objective, const Batch& support,
                   std::size_t steps);

// Exact meta-gradient of L(theta - alpha (.) grad L(theta; S); Q) for one inner step.
// Any other `inner_steps` value raises ConfigError.
MetaGradient meta_gradient_maml(const MetaParams& params, const Objective& objective, const Task& task,
                                std::size_t inner_steps = 1);

// Drops the Hessian term: d_theta is the query gradient at the adapted point.
// d_alpha is -sum_k g_in_k (.) g_out, exact for a single step.
MetaGradient meta_gradient_fomaml(const MetaParams& params, const Objective& objective, const Task& task,
                                  std::size_t inner_steps = 1);

// theta <- theta + rate * (theta* - theta), theta* from `inner_steps` support steps.
MetaParams reptile_update(const MetaParams& params, const Objective& objective, const Task& task,
                          std::size_t inner_steps, double rate);

// Bias-corrected Adam over (theta, alpha); alpha is clamped at 0 afterwards.
void adam_step(AdamState& state, MetaParams& params, const MetaGradient& grad);

// Adapts on the support set, evaluates on the query set.
TaskResult adapt_task(const MetaParams& params, const Objective& objective, const Task& task,
                      std::size_t steps);

// Samples one task uniformly from `sampler`, runs `steps` inner updates and evaluates.
TaskResult adapt_and_eval(const MetaParams& params, const Objective& objective,
                          const TaskSampler& sampler, std::size_t steps, Rng& rng);

struct TrainConfig {
  Algorithm algorithm = Algorithm::maml;
  SamplerKind sampler = SamplerKind::dynamic;
  TaskShape shape;
  std::size_t tasks_per_episode = 20;
  std::size_t episodes_per_epoch = 10;
  std::size_t epochs = 30;
  std::size_t meta_batch = 1;
  double outer_lr = 1e-4;
  double init_inner_lr = 0.01;
  double reptile_rate = 0.5;
  std::size_t inner_steps = 1;
  std::uint64_t seed = 0;

  void validate() const;
};

struct StepRecord {
  std::size_t epoch = 0;
  std::size_t episode = 0;
  std::size_t task = 0;
  double inner_loss = 0.0;
  double outer_loss = 0.0;
  double mean_accuracy = 0.0;
  std::vector<std::vector<int>> class_ids;           // one entry per task in the meta-batch
  std::map<int, double> per_class_accuracy;          // query accuracy of this step's classes
  std::vector<double> memory;                        // after this step; empty for random sampling
};

struct MetricsLog {
  std::vector<StepRecord> records;
  std::vector<std::string> warnings;
};

struct TrainResult {
  MetaParams params;
  MetricsLog log;
};

// Independent stream seed for purpose `stream` under a run seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

// Adapter initialized from the run seed; alpha is scalar except for MetaSGD.
MetaParams initial_meta_params(const TrainConfig& config, const AdapterShape& shape);

// Epochs x episodes x task steps. Each episode starts from a zeroed performance
// memory; each step selects classes (lowest memory values, or uniformly), samples
// a task per meta-batch slot, adapts on support, meta-updates from the query loss,
// then folds the adapted model's per-class query accuracy into the memory.
TrainResult train(const TrainConfig& config, const Objective& objective, const EmbeddingBank& bank,
                  MetaParams initial);

struct EvalSummary {
  double overall_accuracy = 0.0;
  double mean_outer_loss = 0.0;
  std::map<int, double> per_class_accuracy;
  double min_class_accuracy = 0.0;
  double worst3_accuracy = 0.0;  // mean of the three lowest per-class accuracies
};

// Fixed list of `count` uniformly sampled tasks, reproducible from `seed`.
std::vector<Task> make_eval_fixture(const TaskSampler& sampler, std::size_t count, std::uint64_t seed);

EvalSummary evaluate(const MetaParams& params, const Objective& objective, const std::vector<Task>& tasks,
                     std::size_t steps);

}  // namespace metaepi
