#include <random>

#include <benchmark/benchmark.h>

#include "promptseg/metrics.hpp"

using namespace promptseg;

namespace {

void BM_Accumulate(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u;
  MatrixD p(side, side);
  Mask g(side, side);
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    p(i) = u(rng);
    g.bits[static_cast<std::size_t>(i)] = u(rng) < 0.3;
  }
  metrics::MetricAccumulator acc;
  for (auto _ : state) acc.accumulate(p, g);
  state.SetItemsProcessed(state.iterations() * side * side);
}
BENCHMARK(BM_Accumulate)->Arg(32)->Arg(352);

void BM_AveragePrecision(benchmark::State& state) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u;
  MatrixD p(128, 128);
  Mask g(128, 128);
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    p(i) = u(rng);
    g.bits[static_cast<std::size_t>(i)] = u(rng) < 0.4;
  }
  metrics::MetricAccumulator acc;
  acc.accumulate(p, g);
  for (auto _ : state) benchmark::DoNotOptimize(acc.average_precision());
}
BENCHMARK(BM_AveragePrecision);

}  // namespace

BENCHMARK_MAIN();
