// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "segbert/autodiff/tape.hpp"

namespace segbert::autodiff {

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// Decoupled decay: parameters shrink by lr * weight_decay each step,
  /// independent of the gradient moments.
  double weight_decay = 0.0;
};

struct AdamState {
  AdamConfig config;
  std::vector<Matrix> first_moment;
  std::vector<Matrix> second_moment;
  std::int64_t step = 0;
};

AdamState make_adam_state(std::span<Parameter* const> params, const AdamConfig& config);

/// One Adam update of every parameter from its accumulated `grad`.
/// Throws ShapeError if the state does not match the parameters.
void adam_step(std::span<Parameter* const> params, AdamState& state);

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
double clip_grad_norm(std::span<Parameter* const> params, double max_norm);

}  // namespace segbert::autodiff
