#include "metaepi/episodic.hpp"

#include <algorithm>
#include <numeric>
#include <string>
#include <tuple>

#include "metaepi/errors.hpp"

namespace metaepi {

PerformanceMemory::PerformanceMemory(std::size_t classes)
    : values_(classes, 0.0), last_sampled_(classes, kNeverSampled) {}

void PerformanceMemory::initialize_episode() {
  std::fill(values_.begin(), values_.end(), 0.0);
  std::fill(last_sampled_.begin(), last_sampled_.end(), kNeverSampled);
  step_ = 0;
}

void PerformanceMemory::update(const std::map<int, double>& accuracies) {
  for (const auto& [c, a] : accuracies) {
    if (c < 0 || static_cast<std::size_t>(c) >= values_.size()) {
      throw ConfigError("memory update for unknown class " + std::to_string(c));
    }
    if (!(a >= 0.0 && a <= 1.0)) {
      throw ConfigError("class " + std::to_string(c) + " accuracy " + std::to_string(a) +
                        " outside [0, 1]");
    }
  }
  ++step_;
  for (const auto& [c, a] : accuracies) {
    auto& v = values_[static_cast<std::size_t>(c)];
    v = (v + a) / 2.0;
    last_sampled_[static_cast<std::size_t>(c)] = step_;
  }
}

std::vector<int> select_classes(const PerformanceMemory& memory, std::size_t n_way, Rng& rng) {
  const std::size_t classes = memory.class_count();
  if (n_way == 0 || n_way > classes) {
    throw ConfigError("cannot select " + std::to_string(n_way) + " of " + std::to_string(classes) +
                      " classes");
  }
  using Key = std::tuple<double, std::int64_t, std::uint64_t, int>;
  std::vector<Key> keys;
  keys.reserve(classes);
  for (std::size_t c = 0; c < classes; ++c) {
    const int id = static_cast<int>(c);
    keys.emplace_back(memory.value(id), memory.last_sampled(id), rng(), id);
  }
  std::partial_sort(keys.begin(), keys.begin() + static_cast<std::ptrdiff_t>(n_way), keys.end());
  std::vector<int> out(n_way);
  for (std::size_t i = 0; i < n_way; ++i) out[i] = std::get<3>(keys[i]);
  return out;
}

std::vector<int> random_task_classes(std::size_t classes, std::size_t n_way, Rng& rng) {
  if (n_way == 0 || n_way > classes) {
    throw ConfigError("cannot draw " + std::to_string(n_way) + " of " + std::to_string(classes) +
                      " classes");
  }
  std::vector<int> pool(classes);
  std::iota(pool.begin(), pool.end(), 0);
  for (std::size_t i = 0; i < n_way; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, classes - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(n_way);
  return pool;
}

void TaskShape::validate() const {
  if (n_way == 0 || k_shot == 0 || q_query == 0) {
    throw ConfigError("n_way, k_shot and q_query must be positive");
  }
}

std::string_view to_string(SamplerKind kind) {
  return kind == SamplerKind::dynamic ? "dynamic" : "random";
}

SamplerKind parse_sampler(std::string_view text) {
  if (text == "dynamic") return SamplerKind::dynamic;
  if (text == "random") return SamplerKind::random;
  throw ConfigError("unknown sampler '" + std::string(text) + "' (expected dynamic|random)");
}

TaskSampler::TaskSampler(const EmbeddingBank& bank, TaskShape shape)
    : bank_(&bank), shape_(shape), rows_by_class_(bank.rows_by_class()) {
  shape_.validate();
  if (shape_.n_way > bank.class_count) {
    throw ConfigError(std::to_string(shape_.n_way) + "-way tasks need at least that many classes; bank has " +
                      std::to_string(bank.class_count));
  }
  for (std::size_t c = 0; c < rows_by_class_.size(); ++c) {
    if (rows_by_class_[c].size() < shape_.per_class()) {
      throw ConfigError("class " + std::to_string(c) + " has " + std::to_string(rows_by_class_[c].size()) +
                        " rows; tasks need k_shot + q_query = " + std::to_string(shape_.per_class()));
    }
  }
}

namespace {

Task draw(const EmbeddingBank& bank, const TaskShape& shape,
          const std::vector<std::vector<std::size_t>>& rows_by_class, std::span<const int> class_ids,
          Rng& rng) {
  if (class_ids.size() != shape.n_way) throw DimensionError("task needs exactly n_way classes");
  Task task;
  task.class_ids.assign(class_ids.begin(), class_ids.end());
  {
    auto sorted = task.class_ids;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
      throw ConfigError("task classes must be distinct");
    }
  }
  for (int c : class_ids) {
    if (c < 0 || static_cast<std::size_t>(c) >= rows_by_class.size()) {
      throw ConfigError("task class " + std::to_string(c) + " not in bank");
    }
    auto pool = rows_by_class[static_cast<std::size_t>(c)];
    const std::size_t need = shape.per_class();
    if (pool.size() < need) {
      throw ConfigError("class " + std::to_string(c) + " has " + std::to_string(pool.size()) +
                        " rows; need " + std::to_string(need));
    }
    for (std::size_t i = 0; i < need; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
      std::swap(pool[i], pool[pick(rng)]);
    }
    task.support_rows.insert(task.support_rows.end(), pool.begin(),
                             pool.begin() + static_cast<std::ptrdiff_t>(shape.k_shot));
    task.query_rows.insert(task.query_rows.end(), pool.begin() + static_cast<std::ptrdiff_t>(shape.k_shot),
                           pool.begin() + static_cast<std::ptrdiff_t>(need));
  }
  auto to_batch = [&](const std::vector<std::size_t>& rows) {
    EmbeddingBank sub = bank.subset(rows);
    return Batch{std::move(sub.features), std::move(sub.labels), task.class_ids};
  };
  task.support = to_batch(task.support_rows);
  task.query = to_batch(task.query_rows);
  return task;
}

}  // namespace

Task TaskSampler::sample(std::span<const int> class_ids, Rng& rng) const {
  return draw(*bank_, shape_, rows_by_class_, class_ids, rng);
}

Task TaskSampler::sample_random(Rng& rng) const {
  const auto classes = random_task_classes(bank_->class_count, shape_.n_way, rng);
  return sample(classes, rng);
}

Task sample_task(const EmbeddingBank& bank, const TaskShape& shape, std::span<const int> class_ids,
                 Rng& rng) {
  shape.validate();
  return draw(bank, shape, bank.rows_by_class(), class_ids, rng);
}

}  // namespace metaepi
