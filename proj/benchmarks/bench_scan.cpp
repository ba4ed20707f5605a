#include <benchmark/benchmark.h>

#include <vector>

#include "m3sr/network.hpp"
#include "m3sr/ops.hpp"
#include "m3sr/ssm.hpp"
#include "m3sr/train.hpp"

namespace {

using namespace m3sr;

struct Fixture {
  DiscreteSsm d;
  std::vector<DiscreteSsm> steps;
  std::vector<double> x;

  explicit Fixture(std::size_t len) {
    Rng rng(1);
    SsmParams p = SsmParams::s4d_real(8, 0.05);
    for (auto& b : p.b) b = rng.normal();
    d = zoh_discretize(p);
    steps.assign(len, d);
    x.resize(len);
    for (auto& v : x) v = rng.normal();
  }
};

void BM_Recurrence(benchmark::State& state) {
  Fixture f(std::size_t(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(ssm_scan(f.d, f.x));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_KernelConvolution(benchmark::State& state) {
  Fixture f(std::size_t(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(causal_convolve(f.x, ssm_kernel(f.d, f.x.size())));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_BlockedScan(benchmark::State& state) {
  Fixture f(std::size_t(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(blocked_scan(f.steps, f.x, 64));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

BENCHMARK(BM_Recurrence)->Arg(256)->Arg(1024)->Arg(4096);
BENCHMARK(BM_KernelConvolution)->Arg(256)->Arg(1024)->Arg(4096);
BENCHMARK(BM_BlockedScan)->Arg(256)->Arg(1024)->Arg(4096);

// Batched selective scan as used by the network: args are S, L, D.
void BM_SelectiveScan(benchmark::State& state) {
  const std::size_t s = state.range(0), l = state.range(1), d = state.range(2), n = 8;
  Rng rng(2);
  auto rnd = [&](Shape shape, double lo, double hi) {
    Tensor<float> t(std::move(shape));
    for (auto& v : t.data()) v = float(rng.uniform(lo, hi));
    return Var<float>::leaf(std::move(t));
  };
  const auto u = rnd({s, l, d}, -1, 1), dt = rnd({s, l, d}, 1e-3, 0.2), a = rnd({d, n}, -8, -1);
  const auto b = rnd({s, l, n}, -1, 1), c = rnd({s, l, n}, -1, 1), skip = rnd({d}, 0, 1);
  for (auto _ : state) {
    const Var<float> y = sum(selective_scan(u, dt, a, b, c, skip));
    y.backward();
    benchmark::DoNotOptimize(y.value()[0]);
  }
  state.SetItemsProcessed(state.iterations() * std::int64_t(s * l * d * n));
}

BENCHMARK(BM_SelectiveScan)->Args({1, 4096, 16})->Args({16384, 16, 2})->Unit(benchmark::kMillisecond);

// One forward + backward pass of the desk-scale model on a 64x64 input.
void BM_TrainStep(benchmark::State& state) {
  ModelConfig cfg;
  const Model<float> m = build_model<float>(cfg);
  Rng rng(3);
  const CubePair p = synth_pair(rng, 64, 64);
  const auto x = Var<float>::constant(p.rgb.values.reshaped({1, 64, 64, 3}));
  const auto y = Var<float>::constant(p.hsi.values.reshaped({1, 64, 64, 31}));
  for (auto _ : state) {
    for (const auto& q : m.parameters()) q.var.node()->grad = Tensor<float>();
    const Var<float> loss = mae(forward_grid(m, x), y);
    loss.backward();
    benchmark::DoNotOptimize(loss.value()[0]);
  }
}

BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
