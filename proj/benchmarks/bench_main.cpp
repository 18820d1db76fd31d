#include <benchmark/benchmark.h>

#include "sfn/dra.hpp"
#include "sfn/evaluation.hpp"
#include "sfn/fusion.hpp"
#include "sfn/graph.hpp"
#include "sfn/ops.hpp"
#include "sfn/training.hpp"

using namespace sfn;

namespace {

Tensor randn_like(Shape shape, Rng& rng) { return randn(std::move(shape), 1.0, rng, false); }

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  const Tensor a = randn_like({n, n}, rng), b = randn_like({n, n}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(ops::matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(16)->Arg(64)->Arg(128);

void BM_Conv1d(benchmark::State& state) {
  const auto d = static_cast<std::size_t>(state.range(0));
  Rng rng(2);
  const Conv1d conv = Conv1d::init(d, d, 3, rng);
  const Tensor x = randn_like({8, d, 16}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(conv(x));
}
BENCHMARK(BM_Conv1d)->Arg(64)->Arg(256);

void BM_DraForward(benchmark::State& state) {
  const auto seq = static_cast<std::size_t>(state.range(0));
  const auto heads = static_cast<std::size_t>(state.range(1));
  Rng rng(3);
  const DraParams p = DraParams::init(64, 64, 64, heads, rng);
  const Tensor q = randn_like({seq, 64}, rng), k = randn_like({3 * seq, 64}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(dra_forward(p, q, k, k).out);
}
BENCHMARK(BM_DraForward)->Args({16, 2})->Args({16, 8})->Args({64, 2});

void BM_DraForwardBackward(benchmark::State& state) {
  Rng rng(4);
  const DraParams p = DraParams::init(64, 64, 64, 2, rng);
  const Tensor q = randn_like({16, 64}, rng), k = randn_like({48, 64}, rng);
  for (auto _ : state) {
    Graph g;
    GraphScope scope(g);
    g.backward(ops::sum(dra_forward(p, q, k, k).out));
  }
}
BENCHMARK(BM_DraForwardBackward);

void BM_FusionForward(benchmark::State& state) {
  ModelConfig cfg;
  cfg.dim = static_cast<std::size_t>(state.range(0));
  SurgFusionModel model = SurgFusionModel::init(cfg, 5);
  Rng rng(6);
  std::vector<Tensor> seq;
  for (int m = 0; m < 3; ++m) seq.push_back(randn_like({16, cfg.dim}, rng));
  for (auto _ : state) {
    const UnimodalFeatures f = build_unimodal_features(model, {&seq[0]}, {&seq[1]}, {&seq[2]});
    benchmark::DoNotOptimize(multimodal_forward(model.fusion, f, false, rng).score);
  }
}
BENCHMARK(BM_FusionForward)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);

void BM_Spearman(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(7);
  const Tensor a = randn_like({n}, rng), b = randn_like({n}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(spearman_scc(a.data(), b.data()));
}
BENCHMARK(BM_Spearman)->Arg(40)->Arg(1000);

}  // namespace
BENCHMARK_MAIN();
