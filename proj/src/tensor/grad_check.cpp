#include "mexma/tensor/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace mexma::tensor {

namespace {

double evaluate(const LossBuilder& f, std::span<const Array<double>> inputs) {
  Graph<double> g;
  std::vector<Tensor<double>> leaves;
  for (const auto& a : inputs) leaves.push_back(g.constant(a));
  const auto loss = f(g, leaves);
  if (loss.numel() != 1) throw GradCheckError("grad_check: loss is not a scalar");
  const double v = loss.item();
  if (!std::isfinite(v)) throw GradCheckError("grad_check: non-finite forward value");
  return v;
}

}  // namespace

std::vector<GradCheckEntry> grad_check(const LossBuilder& f, std::span<const Array<double>> inputs,
                                       const GradCheckOptions& options) {
  std::vector<Array<double>> analytic;
  {
    Graph<double> g;
    std::vector<Tensor<double>> leaves;
    for (const auto& a : inputs) leaves.push_back(g.variable(a));
    const auto loss = f(g, leaves);
    if (loss.numel() != 1) throw GradCheckError("grad_check: loss is not a scalar");
    if (!std::isfinite(loss.item())) throw GradCheckError("grad_check: non-finite forward value");
    g.backward(loss);
    for (const auto& leaf : leaves) analytic.push_back(g.grad(leaf));
  }

  std::mt19937_64 rng(options.seed);
  std::vector<Array<double>> work(inputs.begin(), inputs.end());
  std::vector<GradCheckEntry> report(inputs.size());
  for (std::size_t p = 0; p < inputs.size(); ++p) {
    std::vector<std::size_t> elements(inputs[p].size());
    std::iota(elements.begin(), elements.end(), std::size_t{0});
    if (options.max_elements_per_input && elements.size() > options.max_elements_per_input) {
      std::shuffle(elements.begin(), elements.end(), rng);
      elements.resize(options.max_elements_per_input);
      std::sort(elements.begin(), elements.end());
    }
    auto& entry = report[p];
    for (auto i : elements) {
      const double original = work[p].values[i];
      work[p].values[i] = original + options.eps;
      const double up = evaluate(f, work);
      work[p].values[i] = original - options.eps;
      const double down = evaluate(f, work);
      work[p].values[i] = original;
      const double numeric = (up - down) / (2.0 * options.eps);
      const double a = analytic[p].values[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double err = std::abs(a - numeric) / denom;
      ++entry.checked;
      if (entry.checked == 1 || err > entry.max_relative_error) {
        entry.max_relative_error = err;
        entry.worst_index = i;
        entry.analytic = a;
        entry.numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace mexma::tensor
