// Serial reference vs OpenMP path of the three hot kernels.

#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "biasmech/analytic.hpp"
#include "biasmech/harness.hpp"
#include "biasmech/signals.hpp"

using namespace biasmech;

namespace {

Execution mode(const benchmark::State& state) {
  return state.range(0) == 0 ? Execution::Serial : Execution::Parallel;
}

void BM_TheoreticalSignals(benchmark::State& state) {
  const SignalQuery q{{MechanismKind::SelectionType1}, std::nullopt};
  for (auto _ : state) {
    benchmark::DoNotOptimize(theoretical_signals(q, 0.3, 200000, 1, mode(state)));
  }
  state.SetItemsProcessed(state.iterations() * 200000);
}

void BM_Covariance(benchmark::State& state) {
  const std::size_t n = 1 << 20;
  std::mt19937_64 gen(1);
  std::uniform_real_distribution<double> u;
  std::vector<double> b(n), t(n), eta(n);
  for (std::size_t i = 0; i < n; ++i) {
    b[i] = u(gen);
    t[i] = u(gen) < 0.4;
    eta[i] = u(gen);
  }
  for (auto _ : state) benchmark::DoNotOptimize(covariance_estimate(b, t, eta, mode(state)));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}

void BM_RunBatch(benchmark::State& state) {
  ExperimentConfig c;
  c.mechanism = {MechanismKind::Confounding};
  c.d = 5;
  c.n_rct = 10000;
  c.n_os = 10000;
  c.n_val = 2000;
  c.n_seeds = 8;
  for (auto _ : state) benchmark::DoNotOptimize(run_batch(c, mode(state)));
  state.SetItemsProcessed(state.iterations() * 8);
}

}  // namespace

BENCHMARK(BM_TheoreticalSignals)->Arg(0)->Arg(1)->ArgName("parallel")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Covariance)->Arg(0)->Arg(1)->ArgName("parallel")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_RunBatch)->Arg(0)->Arg(1)->ArgName("parallel")->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
