#pragma once

// Performance memory, class selection and N-way K-shot Q-query task sampling.

#include <cstddef>
#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include "metaepi/batch.hpp"
#include "metaepi/data.hpp"

namespace metaepi {

using Rng = std::mt19937_64;

// Per-class running accuracy within an episode. Each update folds a task's
// query accuracy into the stored value as P[i] <- (P[i] + A_i) / 2.
class PerformanceMemory {
 public:
  static constexpr std::int64_t kNeverSampled = -1;

  explicit PerformanceMemory(std::size_t classes);

  // All values to 0, recency cleared, step counter to 0.
  void initialize_episode();
  // Folds in one task's per-class accuracies and stamps those classes with the
  // current step. Throws ConfigError for accuracies outside [0, 1] or unknown
  // classes; nothing is modified in that case.
  void update(const std::map<int, double>& accuracies);

  std::size_t class_count() const noexcept { return values_.size(); }
  double value(int c) const { return values_.at(static_cast<std::size_t>(c)); }
  std::int64_t last_sampled(int c) const { return last_sampled_.at(static_cast<std::size_t>(c)); }
  std::int64_t step() const noexcept { return step_; }
  std::span<const double> values() const noexcept { return values_; }

  friend bool operator==(const PerformanceMemory&, const PerformanceMemory&) = default;

 private:
  std::vector<double> values_;
  std::vector<std::int64_t> last_sampled_;
  std::int64_t step_ = 0;
};

// The n_way classes that sort first by (value, last sampled step, random key).
// One random key per class is drawn from `rng` in ascending class order.
// Returned in that sorted order.
std::vector<int> select_classes(const PerformanceMemory& memory, std::size_t n_way, Rng& rng);

// Uniform n_way-subset of {0..classes-1} via partial Fisher-Yates.
std::vector<int> random_task_classes(std::size_t classes, std::size_t n_way, Rng& rng);

struct TaskShape {
  std::size_t n_way = 3;
  std::size_t k_shot = 5;
  std::size_t q_query = 5;

  std::size_t per_class() const noexcept { return k_shot + q_query; }
  void validate() const;
};

struct Task {
  std::vector<int> class_ids;  // task-local index -> global class id
  Batch support;
  Batch query;
  std::vector<std::size_t> support_rows;  // bank row indices
  std::vector<std::size_t> query_rows;

  friend bool operator==(const Task& a, const Task& b) {
    return a.class_ids == b.class_ids && a.support_rows == b.support_rows &&
           a.query_rows == b.query_rows;
  }
};

enum class SamplerKind { dynamic, random };

std::string_view to_string(SamplerKind kind);
SamplerKind parse_sampler(std::string_view text);

struct EpisodePlan {
  std::size_t tasks_per_episode = 20;
  SamplerKind sampler = SamplerKind::dynamic;
  std::uint64_t seed = 0;
};

// Draws tasks from a bank. Construction rejects shapes the bank cannot serve:
// n_way above the class count or any class with fewer than k_shot + q_query rows.
// The bank must outlive the sampler.
class TaskSampler {
 public:
  TaskSampler(const EmbeddingBank& bank, TaskShape shape);

  const TaskShape& shape() const noexcept { return shape_; }
  const EmbeddingBank& bank() const noexcept { return *bank_; }

  // Per class in order, k_shot + q_query distinct rows uniformly without
  // replacement; the first k_shot go to the support set.
  Task sample(std::span<const int> class_ids, Rng& rng) const;
  // Uniformly random classes, then sample().
  Task sample_random(Rng& rng) const;

 private:
  const EmbeddingBank* bank_;
  TaskShape shape_;
  std::vector<std::vector<std::size_t>> rows_by_class_;
};

// One-off task draw; errors name the first class lacking enough rows.
Task sample_task(const EmbeddingBank& bank, const TaskShape& shape, std::span<const int> class_ids,
                 Rng& rng);

}  // namespace metaepi
