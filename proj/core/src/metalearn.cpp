#include "metaepi/metalearn.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "metaepi/errors.hpp"

namespace metaepi {

std::string_view to_string(Algorithm algorithm) {
  switch (algorithm) {
    case Algorithm::maml:
      return "maml";
    case Algorithm::fomaml:
      return "fomaml";
    case Algorithm::reptile:
      return "reptile";
    case Algorithm::metasgd:
      return "metasgd";
  }
  return "?";
}

Algorithm parse_algorithm(std::string_view text) {
  for (Algorithm a : {Algorithm::maml, Algorithm::fomaml, Algorithm::reptile, Algorithm::metasgd}) {
    if (text == to_string(a)) return a;
  }
  throw ConfigError("unknown algorithm '" + std::string(text) + "' (expected maml|fomaml|reptile|metasgd)");
}

void MetaParams::validate() const {
  if (theta.empty()) throw DimensionError("meta parameters: empty theta");
  if (alpha.size() != 1 && alpha.size() != theta.size()) {
    throw DimensionError("meta parameters: alpha must be scalar or match theta (" +
                         std::to_string(theta.size()) + "), got " + std::to_string(alpha.size()));
  }
  require_finite(theta, "theta");
  require_finite(alpha, "alpha");
}

AdamState AdamState::for_params(const MetaParams& params, double learning_rate) {
  AdamState s;
  s.learning_rate = learning_rate;
  const std::size_t n = params.theta.size() + params.alpha.size();
  s.first_moment.assign(n, 0.0);
  s.second_moment.assign(n, 0.0);
  return s;
}

namespace {

void check_shapes(const MetaParams& params, const Objective& objective) {
  params.validate();
  if (params.theta.size() != objective.dimension()) {
    throw DimensionError("theta length " + std::to_string(params.theta.size()) +
                         " does not match objective dimension " + std::to_string(objective.dimension()));
  }
}

// Scores the adapted parameters on the query set.
void score_query(const Objective& objective, const Task& task, TaskResult& result) {
  const Evaluation eval = objective.evaluate(result.adapted, task.query);
  if (!std::isfinite(eval.loss)) throw NumericError("non-finite loss in outer objective");
  result.outer_loss = eval.loss;
  result.per_class_accuracy.clear();
  result.query_accuracy = 0.0;
  if (eval.scores.empty()) return;
  const auto local = accuracy_by_class(eval.scores, task.query.local_labels());
  double sum = 0.0;
  for (const auto& [c, a] : local) {
    const int global = task.query.classes.empty() ? c : task.query.classes.at(static_cast<std::size_t>(c));
    result.per_class_accuracy[global] = a;
    sum += a;
  }
  result.query_accuracy = local.empty() ? 0.0 : sum / static_cast<double>(local.size());
}

void step_inner(const MetaParams& params, Vector& theta, const Vector& grad) {
  for (std::size_t j = 0; j < theta.size(); ++j) theta[j] -= params.alpha_at(j) * grad[j];
}

struct StepOutcome {
  MetaGradient grad;
  TaskResult result;
};

StepOutcome second_order_step(const MetaParams& params, const Objective& objective, const Task& task) {
  StepOutcome out;
  const Vector g_in = gradient(objective, params.theta, task.support, "inner objective");
  out.result.inner_loss = objective.loss(params.theta, task.support);
  out.result.adapted = params.theta;
  step_inner(params, out.result.adapted, g_in);
  const Vector g_out = gradient(objective, out.result.adapted, task.query, "outer objective");

  // d theta* / d theta = I - diag(alpha) H, so the chain rule gives g_out - H (alpha (.) g_out).
  Vector weighted(g_out.size());
  for (std::size_t j = 0; j < g_out.size(); ++j) weighted[j] = params.alpha_at(j) * g_out[j];
  const Vector curvature = hvp(objective, params.theta, task.support, weighted);
  out.grad.d_theta = g_out;
  axpy(-1.0, curvature, out.grad.d_theta);

  if (params.per_parameter()) {
    out.grad.d_alpha.resize(g_in.size());
    for (std::size_t j = 0; j < g_in.size(); ++j) out.grad.d_alpha[j] = -g_in[j] * g_out[j];
  } else {
    out.grad.d_alpha = {-dot(g_in, g_out)};
  }
  score_query(objective, task, out.result);
  return out;
}

StepOutcome first_order_step(const MetaParams& params, const Objective& objective, const Task& task,
                             std::size_t inner_steps) {
  if (inner_steps == 0) throw ConfigError("inner steps must be at least 1");
  StepOutcome out;
  std::vector<Vector> inner_grads;
  Vector theta = params.theta;
  for (std::size_t k = 0; k < inner_steps; ++k) {
    inner_grads.push_back(
        gradient(objective, theta, task.support, "inner objective, step " + std::to_string(k + 1)));
    if (k == 0) out.result.inner_loss = objective.loss(theta, task.support);
    step_inner(params, theta, inner_grads.back());
  }
  out.result.adapted = std::move(theta);
  const Vector g_out = gradient(objective, out.result.adapted, task.query, "outer objective");
  out.grad.d_theta = g_out;
  out.grad.d_alpha.assign(params.alpha.size(), 0.0);
  for (const Vector& g_in : inner_grads) {
    if (params.per_parameter()) {
      for (std::size_t j = 0; j < g_in.size(); ++j) out.grad.d_alpha[j] -= g_in[j] * g_out[j];
    } else {
      out.grad.d_alpha[0] -= dot(g_in, g_out);
    }
  }
  score_query(objective, task, out.result);
  return out;
}

}  // namespace

Vector inner_adapt(const MetaParams& params, const Objective& objective, const Batch& support,
                   std::size_t steps) {
  check_shapes(params, objective);
  if (steps == 0) throw ConfigError("inner adaptation needs at least one step");
  if (support.size() == 0) throw DimensionError("inner adaptation: empty support set");
  Vector theta = params.theta;
  for (std::size_t k = 0; k < steps; ++k) {
    const Vector g = gradient(objective, theta, support, "inner adaptation step " + std::to_string(k + 1));
    step_inner(params, theta, g);
    require_finite(theta, "inner adaptation step " + std::to_string(k + 1));
  }
  return theta;
}

MetaGradient meta_gradient_maml(const MetaParams& params, const Objective& objective, const Task& task,
                                std::size_t inner_steps) {
  check_shapes(params, objective);
  if (inner_steps != 1) {
    throw ConfigError("unsupported configuration: second-order meta-gradient needs exactly one inner step, got " +
                      std::to_string(inner_steps));
  }
  return second_order_step(params, objective, task).grad;
}

MetaGradient meta_gradient_fomaml(const MetaParams& params, const Objective& objective, const Task& task,
                                  std::size_t inner_steps) {
  check_shapes(params, objective);
  return first_order_step(params, objective, task, inner_steps).grad;
}

MetaParams reptile_update(const MetaParams& params, const Objective& objective, const Task& task,
                          std::size_t inner_steps, double rate) {
  const Vector adapted = inner_adapt(params, objective, task.support, inner_steps);
  MetaParams out = params;
  for (std::size_t j = 0; j < out.theta.size(); ++j) out.theta[j] += rate * (adapted[j] - params.theta[j]);
  require_finite(out.theta, "reptile update");
  return out;
}

void adam_step(AdamState& state, MetaParams& params, const MetaGradient& grad) {
  const std::size_t nt = params.theta.size();
  const std::size_t na = params.alpha.size();
  if (grad.d_theta.size() != nt || grad.d_alpha.size() != na) {
    throw DimensionError("adam: gradient shape does not match parameters");
  }
  if (state.first_moment.size() != nt + na || state.second_moment.size() != nt + na) {
    throw DimensionError("adam: moment shape does not match parameters");
  }
  require_finite(grad.d_theta, "meta-gradient (theta)");
  require_finite(grad.d_alpha, "meta-gradient (alpha)");

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  auto update = [&](std::size_t k, double g, double& x) {
    double& m = state.first_moment[k];
    double& v = state.second_moment[k];
    m = state.beta1 * m + (1.0 - state.beta1) * g;
    v = state.beta2 * v + (1.0 - state.beta2) * g * g;
    x -= state.learning_rate * (m / c1) / (std::sqrt(v / c2) + state.epsilon);
  };
  for (std::size_t j = 0; j < nt; ++j) update(j, grad.d_theta[j], params.theta[j]);
  for (std::size_t j = 0; j < na; ++j) {
    update(nt + j, grad.d_alpha[j], params.alpha[j]);
    params.alpha[j] = std::max(params.alpha[j], 0.0);
  }
}

TaskResult adapt_task(const MetaParams& params, const Objective& objective, const Task& task,
                      std::size_t steps) {
  TaskResult result;
  result.inner_loss = objective.loss(params.theta, task.support);
  result.adapted = inner_adapt(params, objective, task.support, steps);
  score_query(objective, task, result);
  return result;
}

TaskResult adapt_and_eval(const MetaParams& params, const Objective& objective,
                          const TaskSampler& sampler, std::size_t steps, Rng& rng) {
  return adapt_task(params, objective, sampler.sample_random(rng), steps);
}

void TrainConfig::validate() const {
  shape.validate();
  if (tasks_per_episode == 0) throw ConfigError("tasks_per_episode must be at least 1");
  if (meta_batch == 0) throw ConfigError("meta_batch must be at least 1");
  if (inner_steps == 0) throw ConfigError("inner_steps_train must be at least 1");
  if (!(outer_lr > 0.0) || !std::isfinite(outer_lr)) throw ConfigError("outer_lr must be positive");
  if (!(init_inner_lr >= 0.0) || !std::isfinite(init_inner_lr)) {
    throw ConfigError("init_inner_lr must be non-negative");
  }
  if (!std::isfinite(reptile_rate)) throw ConfigError("reptile_rate must be finite");
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finalizer over (seed, stream)
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

MetaParams initial_meta_params(const TrainConfig& config, const AdapterShape& shape) {
  MetaParams p;
  p.theta = AdapterParams::initialize(shape, derive_seed(config.seed, 0)).flatten();
  p.alpha.assign(config.algorithm == Algorithm::metasgd ? p.theta.size() : 1, config.init_inner_lr);
  return p;
}

TrainResult train(const TrainConfig& config, const Objective& objective, const EmbeddingBank& bank,
                  MetaParams initial) {
  config.validate();
  check_shapes(initial, objective);
  const TaskSampler sampler(bank, config.shape);

  TrainResult out;
  out.params = std::move(initial);
  MetaParams& params = out.params;
  AdamState adam = AdamState::for_params(params, config.outer_lr);
  PerformanceMemory memory(bank.class_count);
  Rng rng(derive_seed(config.seed, 1));

  const bool dynamic = config.sampler == SamplerKind::dynamic;
  bool second_order = config.algorithm == Algorithm::maml || config.algorithm == Algorithm::metasgd;
  if (second_order && config.inner_steps != 1) {
    second_order = false;
    out.log.warnings.push_back("second-order meta-gradient needs one inner step; using first-order with " +
                               std::to_string(config.inner_steps) + " steps");
  }

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t episode = 0; episode < config.episodes_per_epoch; ++episode) {
      memory.initialize_episode();
      for (std::size_t step = 0; step < config.tasks_per_episode; ++step) {
        StepRecord record;
        record.epoch = epoch;
        record.episode = episode;
        record.task = step;
        try {
          std::vector<TaskResult> results;
          MetaGradient sum{Vector(params.theta.size(), 0.0), Vector(params.alpha.size(), 0.0)};
          Vector reptile_delta(params.theta.size(), 0.0);
          for (std::size_t b = 0; b < config.meta_batch; ++b) {
            const auto classes = dynamic ? select_classes(memory, config.shape.n_way, rng)
                                         : random_task_classes(bank.class_count, config.shape.n_way, rng);
            const Task task = sampler.sample(classes, rng);
            record.class_ids.push_back(task.class_ids);
            if (config.algorithm == Algorithm::reptile) {
              TaskResult r = adapt_task(params, objective, task, config.inner_steps);
              for (std::size_t j = 0; j < reptile_delta.size(); ++j) {
                reptile_delta[j] += r.adapted[j] - params.theta[j];
              }
              results.push_back(std::move(r));
            } else {
              StepOutcome o = second_order ? second_order_step(params, objective, task)
                                           : first_order_step(params, objective, task, config.inner_steps);
              axpy(1.0, o.grad.d_theta, sum.d_theta);
              axpy(1.0, o.grad.d_alpha, sum.d_alpha);
              results.push_back(std::move(o.result));
            }
          }

          const double inv_b = 1.0 / static_cast<double>(config.meta_batch);
          if (config.algorithm == Algorithm::reptile) {
            axpy(config.reptile_rate * inv_b, reptile_delta, params.theta);
            require_finite(params.theta, "reptile update");
          } else {
            for (double& g : sum.d_theta) g *= inv_b;
            for (double& g : sum.d_alpha) g *= inv_b;
            adam_step(adam, params, sum);
          }

          for (const TaskResult& r : results) {
            if (dynamic) memory.update(r.per_class_accuracy);
            record.inner_loss += r.inner_loss * inv_b;
            record.outer_loss += r.outer_loss * inv_b;
            record.mean_accuracy += r.query_accuracy * inv_b;
            for (const auto& [c, a] : r.per_class_accuracy) record.per_class_accuracy[c] = a;
          }
          if (dynamic) record.memory.assign(memory.values().begin(), memory.values().end());
        } catch (const NumericError& e) {
          throw NumericError("epoch " + std::to_string(epoch) + " episode " + std::to_string(episode) +
                             " task " + std::to_string(step) + ": " + e.what());
        }
        out.log.records.push_back(std::move(record));
      }
    }
  }
  return out;
}

std::vector<Task> make_eval_fixture(const TaskSampler& sampler, std::size_t count, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 2));
  std::vector<Task> tasks;
  tasks.reserve(count);
  for (std::size_t i = 0; i < count; ++i) tasks.push_back(sampler.sample_random(rng));
  return tasks;
}

EvalSummary evaluate(const MetaParams& params, const Objective& objective, const std::vector<Task>& tasks,
                     std::size_t steps) {
  EvalSummary s;
  if (tasks.empty()) return s;
  std::map<int, std::pair<double, std::size_t>> per_class;  // sum of accuracies, task count
  for (const Task& task : tasks) {
    const TaskResult r = adapt_task(params, objective, task, steps);
    s.overall_accuracy += r.query_accuracy;
    s.mean_outer_loss += r.outer_loss;
    for (const auto& [c, a] : r.per_class_accuracy) {
      per_class[c].first += a;
      ++per_class[c].second;
    }
  }
  const double n = static_cast<double>(tasks.size());
  s.overall_accuracy /= n;
  s.mean_outer_loss /= n;
  std::vector<double> sorted;
  for (const auto& [c, acc] : per_class) {
    s.per_class_accuracy[c] = acc.first / static_cast<double>(acc.second);
    sorted.push_back(s.per_class_accuracy[c]);
  }
  std::sort(sorted.begin(), sorted.end());
  if (!sorted.empty()) {
    s.min_class_accuracy = sorted.front();
    const std::size_t k = std::min<std::size_t>(3, sorted.size());
    double w = 0.0;
    for (std::size_t i = 0; i < k; ++i) w += sorted[i];
    s.worst3_accuracy = w / static_cast<double>(k);
  }
  return s;
}

}  // namespace metaepi
