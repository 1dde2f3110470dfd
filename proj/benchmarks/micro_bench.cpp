// Micro benchmarks for the hot paths: scan generation, token gathers, the two
// selective-scan evaluators, and one block forward per layer kind.
#include <benchmark/benchmark.h>

#include "zigma/diffkit/ops.hpp"
#include "zigma/model/attention.hpp"
#include "zigma/model/zigma.hpp"
#include "zigma/scan/schemes.hpp"
#include "zigma/ssm/layers.hpp"
#include "zigma/ssm/scan_kernels.hpp"

namespace {

namespace dk = zigma::diffkit;
namespace sc = zigma::scan;
namespace ssm = zigma::ssm;
namespace zm = zigma::model;
using dk::Tensor;

void BM_ZigzagGenerate(benchmark::State& state) {
  const auto side = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(sc::zigzag_2d(side, side, 3));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(side * side));
}
BENCHMARK(BM_ZigzagGenerate)->Arg(16)->Arg(64)->Arg(256);

void BM_HilbertGenerate(benchmark::State& state) {
  const auto side = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(sc::hilbert_2d(side, side + 3, 0));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(side * (side + 3)));
}
BENCHMARK(BM_HilbertGenerate)->Arg(16)->Arg(64)->Arg(256);

void BM_ApplyPermutation(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  dk::Rng rng(1);
  const auto p = sc::Permutation::random(m, rng);
  const Tensor x = Tensor::randn({1, m, 64}, rng);
  dk::NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(sc::apply(p, x));
}
BENCHMARK(BM_ApplyPermutation)->Arg(256)->Arg(4096);

void BM_SelectiveScan(benchmark::State& state) {
  const auto l = static_cast<std::size_t>(state.range(0));
  const auto mode = state.range(1) ? ssm::ScanMode::parallel : ssm::ScanMode::sequential;
  const std::size_t c = 32, n = 16;
  dk::Rng rng(2);
  const Tensor u = Tensor::randn({1, l, c}, rng);
  const Tensor delta = Tensor::uniform({1, l, c}, rng, 0.01, 0.1);
  const Tensor a = Tensor::uniform({c, n}, rng, -2.0, -0.5);
  const Tensor b = Tensor::randn({1, l, n}, rng), cm = Tensor::randn({1, l, n}, rng);
  const Tensor d = Tensor::ones({c});
  dk::NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(ssm::selective_scan(u, delta, a, b, cm, d, mode));
  state.SetLabel(state.range(1) ? "parallel" : "sequential");
}
BENCHMARK(BM_SelectiveScan)->ArgsProduct({{256, 1024}, {0, 1}});

void BM_MambaLayerForward(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  dk::ParameterStore store;
  dk::Rng rng(3);
  ssm::SsmConfig cfg;
  cfg.d_model = 64;
  ssm::MambaLayer layer("m", cfg, store, rng);
  const Tensor x = Tensor::randn({1, m, 64}, rng);
  dk::NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(layer.forward(x));
}
BENCHMARK(BM_MambaLayerForward)->Arg(256)->Arg(1024)->Unit(benchmark::kMillisecond);

void BM_AttentionForward(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  dk::ParameterStore store;
  dk::Rng rng(4);
  zm::MultiHeadAttention attn("a", 64, 4, store, rng);
  const Tensor x = Tensor::randn({1, m, 64}, rng);
  dk::NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(attn.forward(x, x));
}
BENCHMARK(BM_AttentionForward)->Arg(256)->Arg(1024)->Unit(benchmark::kMillisecond);

// Whole-model forward with naive and double-indexed token gathers.
void BM_ZigmaForward(benchmark::State& state) {
  zm::ModelConfig cfg;
  cfg.layers = 4;
  cfg.hidden = 64;
  cfg.height = cfg.width = 16;
  zm::ZigmaModel model(cfg, 5);
  dk::Rng rng(6);
  const Tensor x = Tensor::randn({2, 1, 16, 16}, rng);
  const zm::ConditionBundle bundle{{0.3, 0.7}, std::nullopt};
  const auto indexing = state.range(0) ? zm::Indexing::double_indexed : zm::Indexing::naive;
  dk::NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(model.forward(x, bundle, indexing));
  state.SetLabel(zm::indexing_name(indexing));
}
BENCHMARK(BM_ZigmaForward)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
