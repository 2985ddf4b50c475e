#include "mexma/tensor/adamw.hpp"

#include <cmath>
#include <string>

namespace mexma::tensor {

template <typename T>
AdamWState<T> AdamWState<T>::for_shapes(std::span<const Shape> shapes, AdamWHyper hyper) {
  AdamWState s;
  s.hyper = hyper;
  for (const auto& shape : shapes) {
    s.first_moment.push_back(Array<T>::zeros(shape));
    s.second_moment.push_back(Array<T>::zeros(shape));
  }
  return s;
}

template <typename T>
void adamw_step(std::span<Array<T>* const> params, std::span<const Array<T>> grads,
                AdamWState<T>& state) {
  if (params.size() != grads.size() || params.size() != state.first_moment.size() ||
      params.size() != state.second_moment.size())
    throw ShapeError("adamw", "parameter count " + std::to_string(params.size()) +
                                  " vs gradients " + std::to_string(grads.size()) +
                                  " vs state " + std::to_string(state.first_moment.size()));
  for (std::size_t p = 0; p < params.size(); ++p) {
    const Shape& s = params[p]->shape;
    if (grads[p].shape != s) throw ShapeError("adamw", to_string(s), grads[p].shape);
    if (state.first_moment[p].shape != s || state.second_moment[p].shape != s)
      throw ShapeError("adamw", to_string(s), state.first_moment[p].shape);
  }

  state.step += 1;
  const auto& h = state.hyper;
  const T b1 = static_cast<T>(h.beta1);
  const T b2 = static_cast<T>(h.beta2);
  const T lr = static_cast<T>(h.learning_rate);
  const T eps = static_cast<T>(h.eps);
  const T wd = static_cast<T>(h.weight_decay);
  const auto t = static_cast<double>(state.step);
  const T correction1 = static_cast<T>(1.0 - std::pow(h.beta1, t));
  const T correction2 = static_cast<T>(1.0 - std::pow(h.beta2, t));

  for (std::size_t p = 0; p < params.size(); ++p) {
    auto& w = params[p]->values;
    const auto& g = grads[p].values;
    auto& m = state.first_moment[p].values;
    auto& v = state.second_moment[p].values;
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = b1 * m[i] + (T(1) - b1) * g[i];
      v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
      const T m_hat = m[i] / correction1;
      const T v_hat = v[i] / correction2;
      w[i] -= lr * (m_hat / (std::sqrt(v_hat) + eps) + wd * w[i]);
    }
  }
}

template struct AdamWState<float>;
template struct AdamWState<double>;
template void adamw_step<float>(std::span<Array<float>* const>, std::span<const Array<float>>,
                                AdamWState<float>&);
template void adamw_step<double>(std::span<Array<double>* const>, std::span<const Array<double>>,
                                 AdamWState<double>&);

}  // namespace mexma::tensor
