#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "metaepi/episodic.hpp"
#include "metaepi/errors.hpp"
#include "support.hpp"

namespace metaepi {
namespace {

// Memory holding `values` (each < 1), built through updates only. A value
// above 1/2 is reached by folding 1.0 into 2v - 1.
PerformanceMemory memory_with(const std::vector<double>& values) {
  PerformanceMemory m(values.size());
  for (std::size_t c = 0; c < values.size(); ++c) {
    std::vector<double> tail;
    double v = values[c];
    while (v > 0.5) {
      tail.push_back(1.0);
      v = 2.0 * v - 1.0;
    }
    m.update({{static_cast<int>(c), 2.0 * v}});
    for (auto it = tail.rbegin(); it != tail.rend(); ++it) m.update({{static_cast<int>(c), *it}});
  }
  return m;
}

TEST(Memory, StartsAtZeroNeverSampled) {
  PerformanceMemory m(4);
  for (int c = 0; c < 4; ++c) {
    EXPECT_EQ(m.value(c), 0.0);
    EXPECT_EQ(m.last_sampled(c), PerformanceMemory::kNeverSampled);
  }
  EXPECT_EQ(m.step(), 0);
}

TEST(Memory, InitializeEpisodeResetsEverything) {
  PerformanceMemory m(3);
  m.update({{0, 1.0}, {2, 0.4}});
  m.update({{1, 0.7}});
  m.initialize_episode();
  EXPECT_EQ(m, PerformanceMemory(3));
}

TEST(Memory, UpdateArithmetic) {
  PerformanceMemory m(2);
  m.update({{0, 1.0}});
  EXPECT_EQ(m.value(0), 0.5);
  m.update({{1, 0.5}});
  m.update({{1, 1.0}});
  EXPECT_EQ(m.value(1), 0.625);
  PerformanceMemory fixed(1);
  fixed.update({{0, 1.0}});
  fixed.update({{0, 0.5}});
  EXPECT_EQ(fixed.value(0), 0.5);
}

TEST(Memory, IteratedOnes) {
  PerformanceMemory m(1);
  const double expected[] = {0.5, 0.75, 0.875};
  for (double e : expected) {
    m.update({{0, 1.0}});
    EXPECT_EQ(m.value(0), e);
  }
}

TEST(Memory, StampsUpdatedClassesWithStep) {
  PerformanceMemory m(4);
  m.update({{1, 0.2}, {3, 0.9}});
  m.update({{3, 0.1}});
  EXPECT_EQ(m.step(), 2);
  EXPECT_EQ(m.last_sampled(1), 1);
  EXPECT_EQ(m.last_sampled(3), 2);
  EXPECT_EQ(m.last_sampled(0), PerformanceMemory::kNeverSampled);
}

TEST(Memory, RejectsOutOfRangeWithoutModifying) {
  PerformanceMemory m(3);
  m.update({{0, 0.4}});
  const PerformanceMemory before = m;
  EXPECT_THROW(m.update({{1, 0.5}, {2, 1.5}}), ConfigError);
  EXPECT_THROW(m.update({{1, -0.1}}), ConfigError);
  EXPECT_THROW(m.update({{1, std::nan("")}}), ConfigError);
  EXPECT_THROW(m.update({{5, 0.5}}), ConfigError);
  EXPECT_EQ(m, before);
}

TEST(Memory, MatchesLeftFoldOracle) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> acc(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    PerformanceMemory m(1);
    std::vector<double> seq(200);
    for (double& a : seq) {
      a = acc(rng);
      m.update({{0, a}});
    }
    EXPECT_NEAR(m.value(0), testing::memory_fold(seq), 1e-12);
  }
}

TEST(Select, HelperBuildsRequestedValues) {
  const auto m = memory_with({0.2, 0.0, 0.9, 0.3});
  EXPECT_EQ(std::vector<double>(m.values().begin(), m.values().end()), (std::vector<double>{0.2, 0.0, 0.9, 0.3}));
}

TEST(Select, AscendingValues) {
  Rng rng(1);
  EXPECT_EQ(select_classes(memory_with({0.2, 0.0, 0.5}), 2, rng), (std::vector<int>{1, 0}));
}

TEST(Select, TiedPairChosenAsSet) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    auto chosen = select_classes(memory_with({0.3, 0.3, 0.9}), 2, rng);
    std::sort(chosen.begin(), chosen.end());
    EXPECT_EQ(chosen, (std::vector<int>{0, 1}));
  }
}

TEST(Select, EpisodeStartMatchesOrderingOracle) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    PerformanceMemory m(10);
    Rng a(seed);
    Rng b(seed);
    const std::vector<double> values(10, 0.0);
    const std::vector<std::int64_t> last(10, PerformanceMemory::kNeverSampled);
    EXPECT_EQ(select_classes(m, 3, a), testing::selection_oracle(values, last, 3, b));
  }
}

TEST(Select, RandomMemoriesMatchOrderingOracle) {
  std::mt19937_64 gen(5);
  std::uniform_real_distribution<double> acc(0.0, 1.0);
  std::bernoulli_distribution coarse(0.5);
  for (int trial = 0; trial < 200; ++trial) {
    PerformanceMemory m(8);
    for (int s = 0; s < 6; ++s) {
      std::map<int, double> upd;
      for (int c = 0; c < 8; ++c) {
        // Coarse values create ties across value and recency.
        if (gen() % 3 == 0) upd[c] = coarse(gen) ? 1.0 : 0.0;
      }
      if (!upd.empty()) m.update(upd);
    }
    std::vector<double> values(m.values().begin(), m.values().end());
    std::vector<std::int64_t> last;
    for (int c = 0; c < 8; ++c) last.push_back(m.last_sampled(c));
    Rng a(trial);
    Rng b(trial);
    EXPECT_EQ(select_classes(m, 3, a), testing::selection_oracle(values, last, 3, b));
  }
}

TEST(Select, ArgminAlwaysIncluded) {
  std::mt19937_64 gen(23);
  std::uniform_real_distribution<double> acc(0.0, 0.5);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> values(10);
    for (double& v : values) v = acc(gen);
    const int argmin = static_cast<int>(std::min_element(values.begin(), values.end()) - values.begin());
    Rng rng(trial);
    const auto chosen = select_classes(memory_with(values), 3, rng);
    EXPECT_EQ(chosen.front(), argmin);
  }
}

TEST(Select, ExploresEveryClassBeforeRepeating) {
  const std::size_t classes = 10;
  const std::size_t n_way = 3;
  const std::size_t rounds = (classes + n_way - 1) / n_way;
  std::mt19937_64 gen(31);
  std::uniform_real_distribution<double> acc(0.0, 1.0);
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    PerformanceMemory m(classes);
    Rng rng(seed);
    std::vector<int> order;
    for (std::size_t r = 0; r < rounds; ++r) {
      const auto chosen = select_classes(m, n_way, rng);
      std::map<int, double> upd;
      for (int c : chosen) {
        order.push_back(c);
        upd[c] = seed % 2 == 0 ? 0.0 : acc(gen);
      }
      m.update(upd);
    }
    std::set<int> seen;
    for (int c : order) {
      if (seen.size() == classes) break;
      EXPECT_TRUE(seen.insert(c).second) << "class " << c << " repeated before full coverage, seed " << seed;
    }
    EXPECT_EQ(seen.size(), classes);
  }
}

TEST(Select, RejectsBadWay) {
  Rng rng(0);
  EXPECT_THROW(select_classes(PerformanceMemory(3), 4, rng), ConfigError);
  EXPECT_THROW(select_classes(PerformanceMemory(3), 0, rng), ConfigError);
}

TEST(RandomClasses, FullWayGivesAllClasses) {
  Rng rng(4);
  auto all = random_task_classes(6, 6, rng);
  std::sort(all.begin(), all.end());
  EXPECT_EQ(all, (std::vector<int>{0, 1, 2, 3, 4, 5}));
  EXPECT_THROW(random_task_classes(3, 4, rng), ConfigError);
}

TEST(RandomClasses, FrequenciesUniform) {
  const std::size_t classes = 10;
  const std::size_t n_way = 3;
  const std::size_t draws = 50000;
  std::vector<std::size_t> counts(classes, 0);
  Rng rng(77);
  for (std::size_t i = 0; i < draws; ++i) {
    const auto chosen = random_task_classes(classes, n_way, rng);
    std::set<int> distinct(chosen.begin(), chosen.end());
    ASSERT_EQ(distinct.size(), n_way);
    for (int c : chosen) ++counts[static_cast<std::size_t>(c)];
  }
  const double p = static_cast<double>(n_way) / classes;
  const double mean = draws * p;
  const double sd = std::sqrt(draws * p * (1.0 - p));
  for (std::size_t c = 0; c < classes; ++c) EXPECT_LE(std::abs(counts[c] - mean), 3.0 * sd) << "class " << c;
}

EmbeddingBank small_bank(std::size_t per_class) {
  return generate(SyntheticSpec::uniform(4, 6, 1, 0.2, 0.0, per_class, 3)).bank;
}

TEST(SampleTask, ExactlyEnoughRowsUsesAll) {
  const auto bank = small_bank(10);
  Rng rng(2);
  const Task t = sample_task(bank, {3, 5, 5}, std::vector<int>{2, 0, 3}, rng);
  EXPECT_EQ(t.class_ids, (std::vector<int>{2, 0, 3}));
  EXPECT_EQ(t.support.size(), 15u);
  EXPECT_EQ(t.query.size(), 15u);
  const auto by_class = bank.rows_by_class();
  for (std::size_t k = 0; k < 3; ++k) {
    std::vector<std::size_t> used(t.support_rows.begin() + k * 5, t.support_rows.begin() + k * 5 + 5);
    used.insert(used.end(), t.query_rows.begin() + k * 5, t.query_rows.begin() + k * 5 + 5);
    std::sort(used.begin(), used.end());
    EXPECT_EQ(used, by_class[static_cast<std::size_t>(t.class_ids[k])]);
  }
  EXPECT_EQ(t.support.classes, t.class_ids);
  EXPECT_EQ(t.query.local_labels(), (std::vector<int>{0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 2, 2, 2, 2, 2}));
}

TEST(SampleTask, SupportQueryDisjoint) {
  const auto bank = generate(SyntheticSpec::desk()).bank;
  const TaskSampler sampler(bank, {3, 5, 5});
  Rng rng(8);
  for (int i = 0; i < 1000; ++i) {
    const Task t = sampler.sample_random(rng);
    std::set<std::size_t> support(t.support_rows.begin(), t.support_rows.end());
    ASSERT_EQ(support.size(), 15u);
    for (auto r : t.query_rows) EXPECT_EQ(support.count(r), 0u);
    std::set<std::size_t> query(t.query_rows.begin(), t.query_rows.end());
    EXPECT_EQ(query.size(), 15u);
  }
}

TEST(SampleTask, DeterministicInRng) {
  const auto bank = small_bank(20);
  Rng a(5);
  Rng b(5);
  EXPECT_EQ(sample_task(bank, {2, 3, 4}, std::vector<int>{1, 3}, a),
            sample_task(bank, {2, 3, 4}, std::vector<int>{1, 3}, b));
}

TEST(SampleTask, InsufficientRowsNamesClass) {
  auto bank = small_bank(10);
  std::vector<std::size_t> rows;
  bool dropped = false;
  for (std::size_t i = 0; i < bank.rows(); ++i) {
    if (bank.labels[i] == 2 && !dropped) {
      dropped = true;
      continue;
    }
    rows.push_back(i);
  }
  const auto thin = bank.subset(rows);
  ASSERT_LT(thin.per_class_counts()[2], 10u);
  Rng rng(0);
  try {
    sample_task(thin, {3, 5, 5}, std::vector<int>{0, 2, 3}, rng);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("class 2"), std::string::npos) << e.what();
  }
  EXPECT_THROW(TaskSampler(thin, {3, 5, 5}), ConfigError);
}

TEST(SampleTask, RejectsRepeatedClasses) {
  const auto bank = small_bank(12);
  Rng rng(0);
  EXPECT_THROW(sample_task(bank, {2, 5, 5}, std::vector<int>{1, 1}, rng), ConfigError);
}

TEST(Sampler, ParsesNames) {
  EXPECT_EQ(parse_sampler("dynamic"), SamplerKind::dynamic);
  EXPECT_EQ(parse_sampler(to_string(SamplerKind::random)), SamplerKind::random);
  EXPECT_THROW(parse_sampler("greedy"), ConfigError);
}

}  // namespace
}  // namespace metaepi
