#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "mexma/tensor/graph.hpp"

namespace mexma::tensor {

// Builds a scalar loss from leaf tensors holding the checked inputs.
using LossBuilder = std::function<Tensor<double>(Graph<double>&, std::span<const Tensor<double>>)>;

struct GradCheckOptions {
  double eps = 1e-5;
  // 0 checks every element; otherwise a seeded sample of at most this many per input.
  std::size_t max_elements_per_input = 0;
  std::uint64_t seed = 0;
};

struct GradCheckEntry {
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
};

class GradCheckError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Central differences against backward(); relative error uses max(|a|, |n|, 1e-8).
std::vector<GradCheckEntry> grad_check(const LossBuilder& f, std::span<const Array<double>> inputs,
                                       const GradCheckOptions& options = {});

}  // namespace mexma::tensor
