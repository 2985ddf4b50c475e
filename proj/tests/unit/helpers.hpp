#pragma once

#include <random>
#include <vector>

#include "mexma/tensor/graph.hpp"

namespace mexma::test {

template <typename T = double>
tensor::Array<T> random_array(tensor::Shape shape, std::mt19937_64& rng, double lo = -1.0,
                              double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  auto a = tensor::Array<T>::zeros(std::move(shape));
  for (auto& v : a.values) v = static_cast<T>(u(rng));
  return a;
}

}  // namespace mexma::test
