#include "mexma/tensor/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>

namespace mexma::tensor::kernels {

namespace {

template <typename T>
void softmax_row(std::size_t n, const T* x, T* y) {
  T peak = x[0];
  for (std::size_t j = 1; j < n; ++j) peak = std::max(peak, x[j]);
  T total = 0;
  for (std::size_t j = 0; j < n; ++j) {
    y[j] = std::exp(x[j] - peak);
    total += y[j];
  }
  const T inv = T(1) / total;
  for (std::size_t j = 0; j < n; ++j) y[j] *= inv;
}

template <typename T>
void layer_norm_row(std::size_t n, T eps, const T* x, T* y, T* inv_std) {
  T mean = 0;
  for (std::size_t j = 0; j < n; ++j) mean += x[j];
  mean /= static_cast<T>(n);
  T var = 0;
  for (std::size_t j = 0; j < n; ++j) {
    const T d = x[j] - mean;
    var += d * d;
  }
  var /= static_cast<T>(n);
  const T inv = T(1) / std::sqrt(var + eps);
  for (std::size_t j = 0; j < n; ++j) y[j] = (x[j] - mean) * inv;
  *inv_std = inv;
}

}  // namespace

namespace reference {

template <typename T>
void gemm(std::size_t batch, std::size_t m, std::size_t n, std::size_t k,
          std::span<const T> a, std::span<const T> b, std::span<T> c) {
  for (std::size_t p = 0; p < batch; ++p) {
    const T* ap = a.data() + p * m * k;
    const T* bp = b.data() + p * k * n;
    T* cp = c.data() + p * m * n;
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        T acc = 0;
        for (std::size_t q = 0; q < k; ++q) acc += ap[i * k + q] * bp[q * n + j];
        cp[i * n + j] = acc;
      }
    }
  }
}

template <typename T>
void gemm_tn(std::size_t batch, std::size_t m, std::size_t n, std::size_t k,
             std::span<const T> a, std::span<const T> b, std::span<T> c) {
  for (std::size_t p = 0; p < batch; ++p) {
    const T* ap = a.data() + p * m * k;
    const T* bp = b.data() + p * k * n;
    T* cp = c.data() + p * m * n;
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        T acc = 0;
        for (std::size_t q = 0; q < k; ++q) acc += ap[q * m + i] * bp[q * n + j];
        cp[i * n + j] = acc;
      }
    }
  }
}

template <typename T>
void softmax_rows(std::size_t rows, std::size_t n, std::span<const T> x, std::span<T> y) {
  for (std::size_t r = 0; r < rows; ++r) softmax_row(n, x.data() + r * n, y.data() + r * n);
}

template <typename T>
void layer_norm_rows(std::size_t rows, std::size_t n, T eps, std::span<const T> x,
                     std::span<T> y, std::span<T> inv_std) {
  for (std::size_t r = 0; r < rows; ++r)
    layer_norm_row(n, eps, x.data() + r * n, y.data() + r * n, inv_std.data() + r);
}

}  // namespace reference

namespace parallel {

namespace {

constexpr std::size_t kRowBlock = 4;

// Accumulates `rows` (<= kRowBlock) output rows; each element sums over q in ascending order.
template <typename T>
inline void gemm_rows(std::size_t rows, std::size_t n, std::size_t k, const T* a,
                      std::size_t row_stride, std::size_t inner_stride, const T* b, T* c) {
  // 4 x W register tile held across the whole k loop; every element still sums
  // its products in ascending q, so results match the serial kernel bit for bit.
  constexpr std::size_t W = 64 / sizeof(T);
  std::size_t j0 = 0;
  if (rows == kRowBlock) {
    for (; j0 + W <= n; j0 += W) {
      T acc0[W] = {}, acc1[W] = {}, acc2[W] = {}, acc3[W] = {};
      for (std::size_t q = 0; q < k; ++q) {
        const T* aq = a + q * inner_stride;
        const T a0 = aq[0], a1 = aq[row_stride], a2 = aq[2 * row_stride], a3 = aq[3 * row_stride];
        const T* br = b + q * n + j0;
#pragma omp simd
        for (std::size_t j = 0; j < W; ++j) {
          acc0[j] += a0 * br[j];
          acc1[j] += a1 * br[j];
          acc2[j] += a2 * br[j];
          acc3[j] += a3 * br[j];
        }
      }
      std::copy(acc0, acc0 + W, c + j0);
      std::copy(acc1, acc1 + W, c + n + j0);
      std::copy(acc2, acc2 + W, c + 2 * n + j0);
      std::copy(acc3, acc3 + W, c + 3 * n + j0);
    }
  }
  if (j0 == n) return;
  for (std::size_t i = 0; i < rows; ++i) {
    T* ci = c + i * n;
    std::fill(ci + j0, ci + n, T(0));
    for (std::size_t q = 0; q < k; ++q) {
      const T ai = a[i * row_stride + q * inner_stride];
      const T* br = b + q * n;
#pragma omp simd
      for (std::size_t j = j0; j < n; ++j) ci[j] += ai * br[j];
    }
  }
}

// Shared driver: op(A) is m x k with element (i, q) at a[i * row_stride + q * inner_stride].
template <typename T>
void gemm_strided(std::size_t batch, std::size_t m, std::size_t n, std::size_t k, const T* a,
                  std::size_t row_stride, std::size_t inner_stride, const T* b, T* c) {
  const std::size_t blocks_per_matrix = (m + kRowBlock - 1) / kRowBlock;
  const auto total = static_cast<std::int64_t>(batch * blocks_per_matrix);
#pragma omp parallel for schedule(static) if (total * static_cast<std::int64_t>(n * k) > 32768)
  for (std::int64_t t = 0; t < total; ++t) {
    const std::size_t p = static_cast<std::size_t>(t) / blocks_per_matrix;
    const std::size_t i0 = (static_cast<std::size_t>(t) % blocks_per_matrix) * kRowBlock;
    const std::size_t rows = std::min(kRowBlock, m - i0);
    gemm_rows(rows, n, k, a + p * m * k + i0 * row_stride, row_stride, inner_stride,
              b + p * k * n, c + p * m * n + i0 * n);
  }
}

}  // namespace

template <typename T>
void gemm(std::size_t batch, std::size_t m, std::size_t n, std::size_t k,
          std::span<const T> a, std::span<const T> b, std::span<T> c) {
  gemm_strided(batch, m, n, k, a.data(), k, 1, b.data(), c.data());
}

template <typename T>
void gemm_tn(std::size_t batch, std::size_t m, std::size_t n, std::size_t k,
             std::span<const T> a, std::span<const T> b, std::span<T> c) {
  gemm_strided(batch, m, n, k, a.data(), 1, m, b.data(), c.data());
}

template <typename T>
void softmax_rows(std::size_t rows, std::size_t n, std::span<const T> x, std::span<T> y) {
  const auto count = static_cast<std::int64_t>(rows);
#pragma omp parallel for schedule(static) if (count * static_cast<std::int64_t>(n) > 16384)
  for (std::int64_t r = 0; r < count; ++r)
    softmax_row(n, x.data() + r * n, y.data() + r * n);
}

template <typename T>
void layer_norm_rows(std::size_t rows, std::size_t n, T eps, std::span<const T> x,
                     std::span<T> y, std::span<T> inv_std) {
  const auto count = static_cast<std::int64_t>(rows);
#pragma omp parallel for schedule(static) if (count * static_cast<std::int64_t>(n) > 16384)
  for (std::int64_t r = 0; r < count; ++r)
    layer_norm_row(n, eps, x.data() + r * n, y.data() + r * n, inv_std.data() + r);
}

}  // namespace parallel

template <typename T>
void transpose_batched(std::size_t batch, std::size_t rows, std::size_t cols,
                       std::span<const T> x, std::span<T> y) {
  for (std::size_t p = 0; p < batch; ++p) {
    const T* xp = x.data() + p * rows * cols;
    T* yp = y.data() + p * rows * cols;
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j) yp[j * rows + i] = xp[i * cols + j];
  }
}

#define MEXMA_INSTANTIATE_KERNELS(T)                                                        \
  template void reference::gemm<T>(std::size_t, std::size_t, std::size_t, std::size_t,     \
                                   std::span<const T>, std::span<const T>, std::span<T>);  \
  template void parallel::gemm<T>(std::size_t, std::size_t, std::size_t, std::size_t,      \
                                  std::span<const T>, std::span<const T>, std::span<T>);   \
  template void reference::gemm_tn<T>(std::size_t, std::size_t, std::size_t, std::size_t,  \
                                      std::span<const T>, std::span<const T>, std::span<T>); \
  template void parallel::gemm_tn<T>(std::size_t, std::size_t, std::size_t, std::size_t,   \
                                     std::span<const T>, std::span<const T>, std::span<T>);  \
  template void reference::softmax_rows<T>(std::size_t, std::size_t, std::span<const T>,   \
                                           std::span<T>);                                  \
  template void parallel::softmax_rows<T>(std::size_t, std::size_t, std::span<const T>,    \
                                          std::span<T>);                                   \
  template void reference::layer_norm_rows<T>(std::size_t, std::size_t, T,                 \
                                              std::span<const T>, std::span<T>,            \
                                              std::span<T>);                               \
  template void parallel::layer_norm_rows<T>(std::size_t, std::size_t, T,                  \
                                             std::span<const T>, std::span<T>,             \
                                             std::span<T>);                                \
  template void transpose_batched<T>(std::size_t, std::size_t, std::size_t,                \
                                     std::span<const T>, std::span<T>);

MEXMA_INSTANTIATE_KERNELS(float)
MEXMA_INSTANTIATE_KERNELS(double)

#undef MEXMA_INSTANTIATE_KERNELS

}  // namespace mexma::tensor::kernels
