#include <benchmark/benchmark.h>

#include <random>

#include "cotbench/gateway.hpp"
#include "cotbench/image.hpp"
#include "cotbench/metrics.hpp"
#include "cotbench/traindata.hpp"

using namespace cotbench;

static CorrectnessMatrix random_matrix(std::size_t n) {
  std::mt19937_64 gen(7);
  std::bernoulli_distribution bit(0.6);
  CorrectnessMatrix m;
  for (std::size_t i = 0; i < n; ++i) {
    SampleCorrectness row{std::to_string(i), bit(gen), {}};
    for (std::size_t k = 0; k < 1 + i % 4; ++k) row.steps.push_back(bit(gen));
    m.rows.push_back(std::move(row));
  }
  return m;
}

static void BM_ComputeMetrics(benchmark::State& state) {
  const auto m = random_matrix(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(compute_metrics(m));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ComputeMetrics)->Arg(1622)->Arg(100000);

static void BM_RandomBaselineSimulation(benchmark::State& state) {
  std::vector<std::size_t> lengths;
  for (std::size_t i = 0; i < 1622; ++i) lengths.push_back(1 + i % 3);
  std::uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(compute_metrics(simulate_uniform_guessing(lengths, seed++)));
}
BENCHMARK(BM_RandomBaselineSimulation);

static void BM_RankThree(benchmark::State& state) {
  std::vector<PairVerdict> v{{0, 1, Winner::First, ""},  {1, 0, Winner::Second, ""}, {0, 2, Winner::First, ""},
                             {2, 0, Winner::Second, ""}, {1, 2, Winner::First, ""},  {2, 1, Winner::Second, ""}};
  for (auto _ : state) benchmark::DoNotOptimize(rank_three(v));
}
BENCHMARK(BM_RankThree);

static void BM_CacheKey(benchmark::State& state) {
  ChatRequest req;
  req.model_id = "vlm";
  req.messages = {ChatMessage{Role::User, std::string(2000, 'q'), std::nullopt}};
  req.seed = 3;
  for (auto _ : state) benchmark::DoNotOptimize(cache_key(req));
}
BENCHMARK(BM_CacheKey);

static void BM_BurnInPng(benchmark::State& state) {
  const auto bytes = encode_png(Raster(640, 480));
  for (auto _ : state) benchmark::DoNotOptimize(burn_in_region(bytes, {100, 80, 200, 150}, {}));
}
BENCHMARK(BM_BurnInPng);

BENCHMARK_MAIN();
