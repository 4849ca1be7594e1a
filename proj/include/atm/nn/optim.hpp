// Copyright 2026 The atm-msm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include "atm/nn/tensor.hpp"

namespace atm::nn {

struct AdamConfig {
  double peak_lr = 1e-3;
  std::int64_t warmup_steps = 500;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
  /// Global gradient-norm clip applied before the update; <= 0 disables.
  double clip_norm = 0.0;
};

/// Inverse-square-root schedule with linear warmup, normalized so the peak
/// equals peak_lr at step == warmup: lr(n) = peak * min(n / w, sqrt(w / n)).
double scheduled_lr(const AdamConfig& cfg, std::int64_t step);

struct OptimizerState {
  std::int64_t step = 0;
  std::vector<std::vector<float>> m;
  std::vector<std::vector<float>> v;
};

OptimizerState make_optimizer_state(const ParameterSet& params);

/// One Adam update using the gradients currently held by `params`.
/// Increments state.step first; returns the learning rate used.
double adam_step(ParameterSet& params, OptimizerState& state, const AdamConfig& cfg);

/// L2 norm over all parameter gradients.
double gradient_norm(const ParameterSet& params);

}  // namespace atm::nn
