#include <benchmark/benchmark.h>

#include <cstdint>

#include "mirrams/graph.hpp"
#include "mirrams/metrics.hpp"
#include "mirrams/missingness.hpp"
#include "mirrams/rng.hpp"

using namespace mirrams;

namespace {

Tensor rnd(Shape s, std::uint64_t seed, bool grad = false) {
  Tensor t(std::move(s));
  Rng r(seed);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = r.normal();
  t.requires_grad = grad;
  return t;
}

void BM_MatmulForward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor a = rnd({n, n}, 1), b = rnd({n, n}, 2);
  for (auto _ : state) {
    Graph g;
    const int out = g.matmul(g.leaf(a), g.leaf(b));
    benchmark::DoNotOptimize(g.value(out).data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_MatmulForward)->Arg(64)->Arg(128)->Arg(256);

void BM_MatmulBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor a = rnd({n, n}, 1, true), b = rnd({n, n}, 2, true);
  for (auto _ : state) {
    Graph g;
    const int ia = g.leaf(a), ib = g.leaf(b);
    const int loss = g.sum_all(g.matmul(ia, ib));
    g.backward(loss);
    benchmark::DoNotOptimize(g.grad(ia).data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(6 * n * n * n));
}
BENCHMARK(BM_MatmulBackward)->Arg(64)->Arg(128)->Arg(256);

void BM_AttentionForward(benchmark::State& state) {
  const auto tokens = static_cast<std::size_t>(state.range(0));
  const std::size_t n = 64, d = 64, heads = 8;
  const Tensor q = rnd({n, tokens, d}, 3), k = rnd({n, tokens, d}, 4), v = rnd({n, tokens, d}, 5);
  for (auto _ : state) {
    Graph g;
    const int out = g.attention(g.leaf(q), g.leaf(k), g.leaf(v), heads);
    benchmark::DoNotOptimize(g.value(out).data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * tokens * tokens * d));
}
BENCHMARK(BM_AttentionForward)->Arg(8)->Arg(16)->Arg(32);

void BM_AttentionBackward(benchmark::State& state) {
  const auto tokens = static_cast<std::size_t>(state.range(0));
  const std::size_t n = 64, d = 64, heads = 8;
  const Tensor q = rnd({n, tokens, d}, 3, true), k = rnd({n, tokens, d}, 4, true),
               v = rnd({n, tokens, d}, 5, true);
  for (auto _ : state) {
    Graph g;
    const int iq = g.leaf(q);
    const int loss = g.sum_all(g.attention(iq, g.leaf(k), g.leaf(v), heads));
    g.backward(loss);
    benchmark::DoNotOptimize(g.grad(iq).data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * tokens * tokens * d));
}
BENCHMARK(BM_AttentionBackward)->Arg(8)->Arg(16)->Arg(32);

void BM_MaskSampling(benchmark::State& state) {
  const auto p = static_cast<std::size_t>(state.range(0));
  const ShiftScenario s = make_scenario(p, 0.7, 0.2, 0.3, 11);
  const Ar1Copula c = train_copula(s);
  Rng rng(19);
  for (auto _ : state) {
    const MaskMatrix m = sample_shift_masks(c, 1024, rng);
    benchmark::DoNotOptimize(m.data().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(1024 * p));
}
BENCHMARK(BM_MaskSampling)->Arg(8)->Arg(32)->Arg(128);

void BM_Auc(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  ScoredLabels sl;
  sl.scores.resize(n);
  sl.labels.resize(n);
  Rng rng(23);
  for (std::size_t i = 0; i < n; ++i) {
    sl.scores[i] = rng.uniform();
    sl.labels[i] = static_cast<int>(rng.below(2));
  }
  sl.labels[0] = 0;
  sl.labels[n - 1] = 1;
  for (auto _ : state) benchmark::DoNotOptimize(auc(sl));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}
BENCHMARK(BM_Auc)->Arg(1000)->Arg(100000);

}  // namespace

BENCHMARK_MAIN();
