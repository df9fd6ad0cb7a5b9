// Serial reference vs OpenMP kernels. Second argument: 0 serial, 1 parallel.

#include <benchmark/benchmark.h>

#include <vector>

#include "sgx/kernels.hpp"
#include "sgx/rng.hpp"
#include "sgx/synthesis.hpp"

using namespace sgx;

namespace {

kernels::Backend pick(const benchmark::State& st) {
  return st.range(1) ? kernels::Backend::Parallel : kernels::Backend::Serial;
}

std::vector<float> noise(std::size_t n, std::uint64_t seed) {
  Tensor t = Rng(seed).randn({static_cast<int>(n)});
  return {t.values().begin(), t.values().end()};
}

// range(0): dilation, 32 -> 32 channels at 64x64.
void BM_Conv3x3(benchmark::State& st) {
  kernels::BackendGuard bg(pick(st));
  kernels::ConvGeom g{1, 32, 64, 64, 32, 3, 1, static_cast<int>(st.range(0)), static_cast<int>(st.range(0))};
  auto x = noise(32 * 64 * 64, 1), w = noise(32 * 32 * 9, 2);
  std::vector<float> y(32 * 64 * 64);
  for (auto _ : st) {
    kernels::conv2d_forward(g, x.data(), w.data(), y.data());
    benchmark::DoNotOptimize(y.data());
  }
  st.SetItemsProcessed(st.iterations() * 2ll * 32 * 32 * 9 * 64 * 64);
}

void BM_Conv3x3BackwardWeight(benchmark::State& st) {
  kernels::BackendGuard bg(pick(st));
  kernels::ConvGeom g{1, 32, 64, 64, 32, 3, 1, static_cast<int>(st.range(0)), static_cast<int>(st.range(0))};
  auto x = noise(32 * 64 * 64, 3), gy = noise(32 * 64 * 64, 4);
  std::vector<float> gw(32 * 32 * 9);
  for (auto _ : st) {
    std::fill(gw.begin(), gw.end(), 0.0f);
    kernels::conv2d_backward_weight(g, x.data(), gy.data(), gw.data());
    benchmark::DoNotOptimize(gw.data());
  }
}

void BM_Fir(benchmark::State& st) {
  kernels::BackendGuard bg(pick(st));
  const int d = static_cast<int>(st.range(0));
  kernels::FirGeom g{64, 128, 128, 4, 4, 1, 1, d, 2 * d, d, 2 * d, d};
  auto x = noise(64 * 128 * 128, 5), f = noise(16, 6);
  std::vector<float> y(static_cast<std::size_t>(64) * g.out_h() * g.out_w());
  for (auto _ : st) {
    kernels::fir2d_forward(g, x.data(), f.data(), y.data());
    benchmark::DoNotOptimize(y.data());
  }
}

void BM_Gemm(benchmark::State& st) {
  kernels::BackendGuard bg(pick(st));
  const int n = static_cast<int>(st.range(0));
  auto a = noise(static_cast<std::size_t>(n) * n, 7), b = noise(static_cast<std::size_t>(n) * n, 8);
  std::vector<float> c(static_cast<std::size_t>(n) * n);
  for (auto _ : st) {
    kernels::gemm(n, n, n, a.data(), false, b.data(), false, c.data(), 0.0f);
    benchmark::DoNotOptimize(c.data());
  }
  st.SetItemsProcessed(st.iterations() * 2ll * n * n * n);
}

// Whole refactored generator at the desk 256 spec, 32x32 feature.
void BM_Synthesize256(benchmark::State& st) {
  kernels::BackendGuard bg(pick(st));
  auto g = std::make_shared<Generator>(GeneratorSpec::desk(256), 1);
  GeneratorEX gex(g);
  ag::NoGradGuard ng;
  Var f(Rng(2).randn({1, g->spec().base_channels(), 32, 32}));
  Var w = map_z_to_w(*g, Var(Rng(3).randn({1, g->spec().latent_dim})));
  for (auto _ : st) benchmark::DoNotOptimize(synthesize(gex, f, w, NoiseField::zero()).value().data());
}

}  // namespace

BENCHMARK(BM_Conv3x3)->ArgsProduct({{1, 2, 8}, {0, 1}})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Conv3x3BackwardWeight)->ArgsProduct({{1, 8}, {0, 1}})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Fir)->ArgsProduct({{1, 4}, {0, 1}})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Gemm)->ArgsProduct({{128, 512}, {0, 1}})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Synthesize256)->ArgsProduct({{0}, {0, 1}})->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
