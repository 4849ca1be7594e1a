// Copyright 2026 The atm-msm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "atm/nn/tensor.hpp"

namespace atm::nn {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst;  // "<input index>[<element>]: analytic vs numeric"
  std::size_t checked = 0;
};

/// Compares reverse-mode gradients of a scalar-valued fragment against central
/// differences for every element of `inputs`. The fragment must be a pure
/// function of the input values (build any RNG inside it from a fixed key).
///
/// Per-element error is |a - n| / max(|a|, |n|, floor); the floor keeps
/// near-zero gradients from turning O(eps^2) truncation error into a large
/// ratio.
template <typename T, typename Fragment>
GradCheckReport gradient_check(Fragment&& fragment, std::vector<BasicTensor<T>> inputs, double eps = 1e-3,
                               double floor = 1e-3) {
  for (auto& in : inputs) {
    in.set_requires_grad(true);
    in.grad();
    in.zero_grad();
  }
  {
    BasicTape<T> tape;
    auto loss = fragment(tape);
    tape.backward(loss);
  }
  std::vector<std::vector<T>> analytic;
  for (auto& in : inputs) analytic.emplace_back(in.grad().begin(), in.grad().end());

  GradCheckReport report;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto values = inputs[i].values();
    for (std::size_t k = 0; k < values.size(); ++k) {
      const T saved = values[k];
      values[k] = static_cast<T>(saved + eps);
      BasicTape<T> tp;
      const double fp = static_cast<double>(fragment(tp).item());
      values[k] = static_cast<T>(saved - eps);
      BasicTape<T> tm;
      const double fm = static_cast<double>(fragment(tm).item());
      values[k] = saved;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double a = static_cast<double>(analytic[i][k]);
      const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      ++report.checked;
      if (err > report.max_rel_error || std::isnan(err)) {
        report.max_rel_error = std::isnan(err) ? INFINITY : err;
        report.worst = std::to_string(i) + "[" + std::to_string(k) + "]: " + std::to_string(a) + " vs " +
                       std::to_string(numeric);
      }
    }
  }
  return report;
}

}  // namespace atm::nn
