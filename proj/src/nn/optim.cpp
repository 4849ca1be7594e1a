// Copyright 2026 The atm-msm Authors
// SPDX-License-Identifier: Apache-2.0

#include "atm/nn/optim.hpp"

#include <algorithm>
#include <cmath>

#include "atm/common/error.hpp"

namespace atm::nn {

double scheduled_lr(const AdamConfig& cfg, std::int64_t step) {
  if (step <= 0) return 0.0;
  const double n = static_cast<double>(step);
  const double w = static_cast<double>(std::max<std::int64_t>(cfg.warmup_steps, 1));
  return cfg.peak_lr * std::min(n / w, std::sqrt(w / n));
}

OptimizerState make_optimizer_state(const ParameterSet& params) {
  OptimizerState s;
  for (const auto& e : params.entries()) {
    s.m.emplace_back(static_cast<std::size_t>(e.tensor.numel()), 0.0f);
    s.v.emplace_back(static_cast<std::size_t>(e.tensor.numel()), 0.0f);
  }
  return s;
}

double gradient_norm(const ParameterSet& params) {
  double s = 0.0;
  for (const auto& e : params.entries()) {
    if (!e.tensor.has_grad()) continue;
    for (float g : e.tensor.grad()) s += static_cast<double>(g) * g;
  }
  return std::sqrt(s);
}

double adam_step(ParameterSet& params, OptimizerState& state, const AdamConfig& cfg) {
  if (state.m.size() != params.size() || state.v.size() != params.size())
    throw ContractViolation("adam_step: optimizer state does not match parameter count");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto n = static_cast<std::size_t>(params.entries()[i].tensor.numel());
    if (state.m[i].size() != n || state.v[i].size() != n)
      throw ContractViolation("adam_step: moment shape mismatch for " + params.entries()[i].name);
  }
  state.step += 1;
  const double lr = scheduled_lr(cfg, state.step);
  double clip = 1.0;
  if (cfg.clip_norm > 0.0) {
    const double norm = gradient_norm(params);
    if (norm > cfg.clip_norm) clip = cfg.clip_norm / norm;
  }
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params.entries()[i].tensor;
    auto values = p.values();
    auto grads = p.grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t k = 0; k < values.size(); ++k) {
      const double g = static_cast<double>(grads[k]) * clip;
      const double mk = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g;
      const double vk = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g * g;
      m[k] = static_cast<float>(mk);
      v[k] = static_cast<float>(vk);
      const double update = lr * (mk / bc1) / (std::sqrt(vk / bc2) + cfg.eps);
      values[k] = static_cast<float>(values[k] - update);
    }
  }
  return lr;
}

}  // namespace atm::nn
