#pragma once

// Finite-difference checks shared by the `grad-check` subcommand and the
// acceptance suite. Everything runs in double.

#include <cstdint>
#include <string>
#include <vector>

#include "mexma/trainer/trainer.hpp"

namespace mexma::trainer {

struct GradCheckRow {
  std::string name;
  double max_relative_error = 0;
  std::size_t checked = 0;  // elements compared
};

// Every catalog primitive on three input shapes; one row per primitive (worst shape).
std::vector<GradCheckRow> primitive_grad_checks(std::uint64_t seed);

// Encoder on all four views, the unmasking head and every enabled loss term, on a
// 2-sentence batch. The model keeps the configured depth, heads and loss setup but is
// narrowed to model_dim = 2 * heads so that every element can be checked, and is
// initialized at `init_std` so gradients sit well above finite-difference noise.
// One row per parameter tensor.
std::vector<GradCheckRow> model_grad_check(const TrainConfig& cfg, std::uint64_t seed,
                                           double init_std = 0.3);

struct StopGradientCheck {
  double max_abs_diff_off = 0;  // token gradients off vs constant-substitution oracle
  double max_abs_diff_on = 0;   // token gradients on vs the same oracle
};

// d(unmasking loss)/d(encoder params) with token gradients off against the oracle
// that freezes the masked views' hidden states as constants.
StopGradientCheck stop_gradient_check(const TrainConfig& cfg, std::uint64_t seed);

}  // namespace mexma::trainer
