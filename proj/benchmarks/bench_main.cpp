#include <benchmark/benchmark.h>

#include "disenpoi/graphs.hpp"
#include "disenpoi/model.hpp"
#include "oracles.hpp"

using namespace disenpoi;

namespace {

void BM_Linear(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng = keyed_rng({1});
  const Tensor x = oracle::random_tensor(rng, n, 64), w = oracle::random_tensor(rng, 64, 64);
  for (auto _ : state) {
    Tape tape(false, false);
    benchmark::DoNotOptimize(ad::linear(tape.constant(x), tape.constant(w)).value()[0]);
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}
BENCHMARK(BM_Linear)->Arg(256)->Arg(4096);

void BM_GeoGraphBuild(benchmark::State& state) {
  Rng rng = keyed_rng({2});
  const auto pois = oracle::random_pois(rng, static_cast<std::size_t>(state.range(0)), 20.0);
  for (auto _ : state) benchmark::DoNotOptimize(build_geo_graph(pois, 1.0).num_edges());
}
BENCHMARK(BM_GeoGraphBuild)->Arg(2000)->Arg(20000)->Unit(benchmark::kMillisecond);

struct Batch {
  std::vector<LatLon> pois;
  GeoGraph graph;
  std::vector<Sample> samples;
};

Batch make_batch(std::size_t num_pois, std::size_t size) {
  Batch b;
  Rng rng = keyed_rng({3});
  b.pois = oracle::random_pois(rng, num_pois, 20.0);
  b.graph = build_geo_graph(b.pois, 1.0);
  for (std::size_t i = 0; i < size; ++i) {
    b.samples.push_back({0, oracle::random_context(rng, 1 + uniform_index(rng, 15), num_pois),
                         static_cast<PoiIndex>(uniform_index(rng, num_pois)),
                         static_cast<std::uint8_t>(i % 2)});
  }
  return b;
}

// One training step's forward and backward on a 256-sample batch.
void BM_ForwardBackward(benchmark::State& state) {
  const Batch b = make_batch(2000, 256);
  ModelConfig c;
  c.num_pois = b.pois.size();
  Model m(c);
  m.initialize(1);
  for (auto _ : state) {
    Tape tape(true, false);
    const ForwardOutput out = forward(tape, m, b.graph, b.samples, 0.2);
    tape.backward(out.loss);
    m.params().zero_grad();
  }
  state.SetItemsProcessed(state.iterations() * 256);
}
BENCHMARK(BM_ForwardBackward)->Unit(benchmark::kMillisecond);

void BM_Score(benchmark::State& state) {
  const Batch b = make_batch(2000, 1024);
  ModelConfig c;
  c.num_pois = b.pois.size();
  Model m(c);
  m.initialize(1);
  for (auto _ : state) benchmark::DoNotOptimize(score(m, b.graph, b.samples).back());
  state.SetItemsProcessed(state.iterations() * 1024);
}
BENCHMARK(BM_Score)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
