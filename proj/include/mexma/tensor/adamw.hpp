#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mexma/tensor/graph.hpp"

namespace mexma::tensor {

struct AdamWHyper {
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;

  bool operator==(const AdamWHyper&) const = default;
};

template <typename T>
struct AdamWState {
  AdamWHyper hyper;
  std::vector<Array<T>> first_moment;
  std::vector<Array<T>> second_moment;
  std::uint64_t step = 0;

  // Zero accumulators shaped like `params`.
  static AdamWState for_shapes(std::span<const Shape> shapes, AdamWHyper hyper = {});
};

// One decoupled-weight-decay Adam update: w -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * w).
// Throws ShapeError when params, grads and accumulators disagree.
template <typename T>
void adamw_step(std::span<Array<T>* const> params, std::span<const Array<T>> grads,
                AdamWState<T>& state);

}  // namespace mexma::tensor
