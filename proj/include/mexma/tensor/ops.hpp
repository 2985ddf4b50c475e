#pragma once

// Differentiable primitives. Each function computes its forward value eagerly and
// records a node (with a backward closure when any input requires a gradient).

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mexma/tensor/graph.hpp"

namespace mexma::tensor {

// Rank-2 product, or batched rank-3 product with matching leading extents.
// The transpose flags apply to the last two axes of the respective operand.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool transpose_a = false,
                 bool transpose_b = false);

// Elementwise; `b` may also match a trailing suffix of `a`'s shape (bias broadcast).
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);

template <typename T>
Tensor<T> concat(std::span<const Tensor<T>> parts, int axis);
template <typename T>
Tensor<T> slice(const Tensor<T>& a, int axis, std::size_t start, std::size_t length);

// Rows of a rank-2 table picked by index; backward scatter-adds in index order.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& table, std::span<const std::size_t> rows);

template <typename T>
Tensor<T> softmax(const Tensor<T>& a, int axis = -1);
// Normalizes to zero mean, unit variance along `axis`; no affine part.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& a, int axis = -1, T eps = T(1e-5));
template <typename T>
Tensor<T> gelu(const Tensor<T>& a);

// Reductions drop `axis` from the shape.
template <typename T>
Tensor<T> mean(const Tensor<T>& a, int axis);
template <typename T>
Tensor<T> sum(const Tensor<T>& a, int axis);

// x / max(||x||, eps) along `axis`.
template <typename T>
Tensor<T> l2_normalize(const Tensor<T>& a, int axis = -1, T eps = T(1e-12));

template <typename T>
Tensor<T> log(const Tensor<T>& a);
template <typename T>
Tensor<T> exp(const Tensor<T>& a);
template <typename T>
Tensor<T> square(const Tensor<T>& a);

// Axis permutation; an empty `perm` reverses the axes.
template <typename T>
Tensor<T> transpose(const Tensor<T>& a, std::vector<std::size_t> perm = {});

// Replaces elements where mask != 0 by `value`; those elements pass no gradient.
template <typename T>
Tensor<T> masked_fill(const Tensor<T>& a, std::span<const std::uint8_t> mask, T value);

template <typename T>
Tensor<T> stop_gradient(const Tensor<T>& a);
template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape);

// Mean negative log-likelihood of `targets` under row-wise softmax of rank-2 `logits`.
template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const std::size_t> targets);

// max(x, floor); elements at the floor pass no gradient.
template <typename T>
Tensor<T> clamp_min(const Tensor<T>& a, T floor);

// Sum of every element, as a scalar.
template <typename T>
Tensor<T> sum_all(const Tensor<T>& a);
template <typename T>
Tensor<T> mean_all(const Tensor<T>& a);

// Attribute bag for the name-dispatched entry point.
struct PrimitiveAttrs {
  int axis = -1;
  double eps = 0.0;
  double scalar = 1.0;
  bool transpose_a = false;
  bool transpose_b = false;
  std::size_t start = 0;
  std::size_t length = 0;
  std::vector<std::size_t> perm;
  Shape shape;
  std::vector<std::size_t> indices;
  std::vector<std::uint8_t> mask;
};

class UnknownPrimitive : public std::invalid_argument {
 public:
  explicit UnknownPrimitive(std::string_view name)
      : std::invalid_argument("unknown primitive '" + std::string(name) + "'") {}
};

// Names accepted by apply_primitive, in catalog order.
std::span<const std::string_view> primitive_catalog();

template <typename T>
Tensor<T> apply_primitive(std::string_view name, std::span<const Tensor<T>> inputs,
                          const PrimitiveAttrs& attrs = {});

}  // namespace mexma::tensor
