#include <benchmark/benchmark.h>

#include "metaepi/data.hpp"
#include "metaepi/episodic.hpp"
#include "metaepi/metalearn.hpp"
#include "metaepi/model.hpp"

namespace {

using namespace metaepi;

struct DeskProblem {
  SyntheticData data = generate(SyntheticSpec::desk());
  AdapterShape shape{32, 16, 0.5, 10.0};
  AdapterObjective objective{shape, data.prototypes};
  TaskSampler sampler{data.bank, {3, 5, 5}};
  MetaParams params{AdapterParams::initialize(shape, 1).flatten(), {0.01}};
  Task task;

  DeskProblem() {
    Rng rng(3);
    task = sampler.sample_random(rng);
  }
};

const DeskProblem& problem() {
  static const DeskProblem p;
  return p;
}

void BM_Gradient(benchmark::State& state) {
  const auto& p = problem();
  for (auto _ : state) benchmark::DoNotOptimize(gradient(p.objective, p.params.theta, p.task.support));
}
BENCHMARK(BM_Gradient);

void BM_Hvp(benchmark::State& state) {
  const auto& p = problem();
  const Vector v(p.params.theta.size(), 1.0);
  for (auto _ : state) benchmark::DoNotOptimize(hvp(p.objective, p.params.theta, p.task.support, v));
}
BENCHMARK(BM_Hvp);

void BM_MetaGradientMaml(benchmark::State& state) {
  const auto& p = problem();
  for (auto _ : state) benchmark::DoNotOptimize(meta_gradient_maml(p.params, p.objective, p.task));
}
BENCHMARK(BM_MetaGradientMaml);

void BM_MetaGradientFomaml(benchmark::State& state) {
  const auto& p = problem();
  for (auto _ : state) benchmark::DoNotOptimize(meta_gradient_fomaml(p.params, p.objective, p.task));
}
BENCHMARK(BM_MetaGradientFomaml);

void BM_SampleTask(benchmark::State& state) {
  const auto& p = problem();
  Rng rng(5);
  for (auto _ : state) benchmark::DoNotOptimize(p.sampler.sample_random(rng));
}
BENCHMARK(BM_SampleTask);

void BM_SelectClasses(benchmark::State& state) {
  PerformanceMemory memory(static_cast<std::size_t>(state.range(0)));
  Rng rng(9);
  for (auto _ : state) benchmark::DoNotOptimize(select_classes(memory, 3, rng));
}
BENCHMARK(BM_SelectClasses)->Arg(10)->Arg(40)->Arg(1000);

// One episode of dynamic-sampler MAML training.
void BM_TrainEpisode(benchmark::State& state) {
  const auto& p = problem();
  TrainConfig config;
  config.epochs = 1;
  config.episodes_per_epoch = 1;
  for (auto _ : state) benchmark::DoNotOptimize(train(config, p.objective, p.data.bank, p.params));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(config.tasks_per_episode));
}
BENCHMARK(BM_TrainEpisode)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
