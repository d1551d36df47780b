// Serial reference vs OpenMP member-parallel paths. Both produce identical
// results; these measure the wall-clock difference.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "gleamcast/dcrnn.hpp"
#include "gleamcast/gleamlite.hpp"
#include "gleamcast/metrics.hpp"
#include "gleamcast/parallel.hpp"
#include "gleamcast/train_sample.hpp"

using namespace gleamcast;

namespace {

par::Exec exec_of(const benchmark::State& state) {
  return state.range(0) == 0 ? par::Exec::serial : par::Exec::parallel;
}

graph::MobilityGraph ring(std::size_t p) {
  Array2 a(p, p);
  for (std::size_t i = 0; i < p; ++i) a(i, (i + 1) % p) = a((i + 1) % p, i) = 100.0;
  std::vector<std::string> codes;
  for (std::size_t i = 0; i < p; ++i) codes.push_back("L" + std::to_string(i));
  return graph::from_adjacency(a, codes);
}

void BM_SimulateEnsemble(benchmark::State& state) {
  const std::size_t p = 20;
  const graph::MobilityGraph g = ring(p);
  const Array2 mixing = sim::mixing_matrix(g);
  const std::vector<sim::Count> pop(p, 1000000), e(p, 200), i(p, 200);
  const sim::PopState init = sim::PopState::seeded(pop, e, i);
  const std::vector<sim::GridPoint> grid{{0.25, 1.0}, {0.3, 1.0}, {0.35, 1.0}};
  for (auto _ : state) {
    auto members = sim::simulate_ensemble(init, sim::EpiParams{}, grid, 32, 60, mixing, 7, exec_of(state));
    benchmark::DoNotOptimize(members.data());
  }
}
BENCHMARK(BM_SimulateEnsemble)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_BlockedMae(benchmark::State& state) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> normal;
  std::vector<double> a(1 << 20), b(1 << 20);
  for (std::size_t k = 0; k < a.size(); ++k) {
    a[k] = normal(rng);
    b[k] = normal(rng);
  }
  for (auto _ : state) benchmark::DoNotOptimize(metrics::mae_metric(a, b, exec_of(state)));
}
BENCHMARK(BM_BlockedMae)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_DropoutPasses(benchmark::State& state) {
  const std::size_t p = 10;
  dcrnn::ModelConfig cfg;
  const dcrnn::Model model(cfg, ring(p));
  const ad::ParamSet params = model.init_params(1);
  dcrnn::ResidualTensor window = dcrnn::ResidualTensor::zeros(cfg.window, p, cfg.input_features);
  for (auto& f : window.frames)
    for (double& v : f.data()) v = 0.1;
  const train::PredictFn predict = [&](const ad::ParamSet& ps) {
    std::vector<double> flat;
    for (const Array2& a : model.predict(ps, window)) flat.insert(flat.end(), a.data().begin(), a.data().end());
    return flat;
  };
  for (auto _ : state) {
    auto passes = train::mc_dropout_predict(params, predict, 0.05, 64, 11, exec_of(state));
    benchmark::DoNotOptimize(passes.data());
  }
}
BENCHMARK(BM_DropoutPasses)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
