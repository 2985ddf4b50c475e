// Serial reference kernels against the OpenMP versions at the toy model's shapes
// (batch 32, length ~16, width 64, feed-forward 256) and one larger square product.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "mexma/tensor/kernels.hpp"

namespace k = mexma::tensor::kernels;

namespace {

std::vector<float> filled(std::size_t n, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<float> d(-1, 1);
  std::vector<float> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

template <bool Parallel>
void BM_gemm(benchmark::State& st) {
  const auto batch = static_cast<std::size_t>(st.range(0)), m = static_cast<std::size_t>(st.range(1)),
             n = static_cast<std::size_t>(st.range(2)), kk = static_cast<std::size_t>(st.range(3));
  const auto a = filled(batch * m * kk, 1), b = filled(batch * kk * n, 2);
  std::vector<float> c(batch * m * n);
  for (auto _ : st) {
    if constexpr (Parallel)
      k::parallel::gemm<float>(batch, m, n, kk, a, b, c);
    else
      k::reference::gemm<float>(batch, m, n, kk, a, b, c);
    benchmark::DoNotOptimize(c.data());
  }
  st.SetItemsProcessed(static_cast<std::int64_t>(st.iterations() * batch * m * n * kk * 2));
}

template <bool Parallel>
void BM_gemm_tn(benchmark::State& st) {
  const auto m = static_cast<std::size_t>(st.range(0)), n = static_cast<std::size_t>(st.range(1)),
             kk = static_cast<std::size_t>(st.range(2));
  const auto a = filled(kk * m, 1), b = filled(kk * n, 2);
  std::vector<float> c(m * n);
  for (auto _ : st) {
    if constexpr (Parallel)
      k::parallel::gemm_tn<float>(1, m, n, kk, a, b, c);
    else
      k::reference::gemm_tn<float>(1, m, n, kk, a, b, c);
    benchmark::DoNotOptimize(c.data());
  }
  st.SetItemsProcessed(static_cast<std::int64_t>(st.iterations() * m * n * kk * 2));
}

template <bool Parallel>
void BM_softmax(benchmark::State& st) {
  const auto rows = static_cast<std::size_t>(st.range(0)), n = static_cast<std::size_t>(st.range(1));
  const auto x = filled(rows * n, 3);
  std::vector<float> y(rows * n);
  for (auto _ : st) {
    if constexpr (Parallel)
      k::parallel::softmax_rows<float>(rows, n, x, y);
    else
      k::reference::softmax_rows<float>(rows, n, x, y);
    benchmark::DoNotOptimize(y.data());
  }
  st.SetItemsProcessed(static_cast<std::int64_t>(st.iterations() * rows * n));
}

template <bool Parallel>
void BM_layer_norm(benchmark::State& st) {
  const auto rows = static_cast<std::size_t>(st.range(0)), n = static_cast<std::size_t>(st.range(1));
  const auto x = filled(rows * n, 4);
  std::vector<float> y(rows * n), inv(rows);
  for (auto _ : st) {
    if constexpr (Parallel)
      k::parallel::layer_norm_rows<float>(rows, n, 1e-5f, x, y, inv);
    else
      k::reference::layer_norm_rows<float>(rows, n, 1e-5f, x, y, inv);
    benchmark::DoNotOptimize(y.data());
  }
  st.SetItemsProcessed(static_cast<std::int64_t>(st.iterations() * rows * n));
}

// projection (tokens x width) * (width x ff), per-head scores, square 256
void gemm_shapes(benchmark::internal::Benchmark* b) {
  b->Args({1, 512, 256, 64})->Args({128, 16, 16, 16})->Args({1, 256, 256, 256});
}

}  // namespace

BENCHMARK(BM_gemm<false>)->Name("gemm/reference")->Apply(gemm_shapes);
BENCHMARK(BM_gemm<true>)->Name("gemm/parallel")->Apply(gemm_shapes)->UseRealTime();
BENCHMARK(BM_gemm_tn<false>)->Name("gemm_tn/reference")->Args({64, 256, 512});
BENCHMARK(BM_gemm_tn<true>)->Name("gemm_tn/parallel")->Args({64, 256, 512})->UseRealTime();
BENCHMARK(BM_softmax<false>)->Name("softmax/reference")->Args({2048, 16})->Args({512, 405});
BENCHMARK(BM_softmax<true>)->Name("softmax/parallel")->Args({2048, 16})->Args({512, 405})->UseRealTime();
BENCHMARK(BM_layer_norm<false>)->Name("layer_norm/reference")->Args({512, 64});
BENCHMARK(BM_layer_norm<true>)->Name("layer_norm/parallel")->Args({512, 64})->UseRealTime();

BENCHMARK_MAIN();
