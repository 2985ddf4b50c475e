#pragma once

// Dense compute kernels behind the autodiff primitives.
//
// Every kernel exists twice: `reference` is the plain serial loop kept as a
// test oracle, `parallel` distributes independent output rows over OpenMP
// threads. Both accumulate each output element in the same index order, so the
// result never depends on the thread count.

#include <cstddef>
#include <span>

namespace mexma::tensor::kernels {

namespace reference {

// C[b] = A[b] * B[b] for `batch` row-major (m x k) * (k x n) products.
template <typename T>
void gemm(std::size_t batch, std::size_t m, std::size_t n, std::size_t k,
          std::span<const T> a, std::span<const T> b, std::span<T> c);

// C[b] = A[b]^T * B[b] where each A[b] is stored row-major as (k x m).
template <typename T>
void gemm_tn(std::size_t batch, std::size_t m, std::size_t n, std::size_t k,
             std::span<const T> a, std::span<const T> b, std::span<T> c);

// Row-wise softmax over `rows` contiguous rows of length `n`.
template <typename T>
void softmax_rows(std::size_t rows, std::size_t n, std::span<const T> x, std::span<T> y);

// Row-wise normalization to zero mean and unit variance (biased), eps inside the sqrt.
// `inv_std` receives one value per row.
template <typename T>
void layer_norm_rows(std::size_t rows, std::size_t n, T eps, std::span<const T> x,
                     std::span<T> y, std::span<T> inv_std);

}  // namespace reference

namespace parallel {

template <typename T>
void gemm(std::size_t batch, std::size_t m, std::size_t n, std::size_t k,
          std::span<const T> a, std::span<const T> b, std::span<T> c);

template <typename T>
void gemm_tn(std::size_t batch, std::size_t m, std::size_t n, std::size_t k,
             std::span<const T> a, std::span<const T> b, std::span<T> c);

template <typename T>
void softmax_rows(std::size_t rows, std::size_t n, std::span<const T> x, std::span<T> y);

template <typename T>
void layer_norm_rows(std::size_t rows, std::size_t n, T eps, std::span<const T> x,
                     std::span<T> y, std::span<T> inv_std);

}  // namespace parallel

// Out-of-place transpose of each (rows x cols) matrix in a batch.
template <typename T>
void transpose_batched(std::size_t batch, std::size_t rows, std::size_t cols,
                       std::span<const T> x, std::span<T> y);

}  // namespace mexma::tensor::kernels
