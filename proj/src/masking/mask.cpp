// Copyright 2026 The atm-msm Authors
// SPDX-License-Identifier: Apache-2.0

#include "atm/masking/mask.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>

#include "atm/common/error.hpp"
#include "atm/common/log.hpp"

namespace atm::masking {

std::string to_string(MaskStrategy s) {
  switch (s) {
    case MaskStrategy::Random: return "random";
    case MaskStrategy::High: return "high";
    case MaskStrategy::Low: return "low";
    case MaskStrategy::Mixed: return "mixed";
  }
  return "?";
}

MaskStrategy parse_strategy(const std::string& s) {
  for (auto k : kAllStrategies)
    if (to_string(k) == s) return k;
  throw ConfigError("unknown mask strategy '" + s + "' (expected random|high|low|mixed)");
}

int num_blocks(int T, double p, int c) {
  if (c < 1) throw ContractViolation("num_blocks: context must be >= 1");
  if (!(p > 0.0 && p <= 1.0)) throw ContractViolation("num_blocks: mask fraction must be in (0, 1]");
  if (T < c) throw LengthError("num_blocks: sequence of " + std::to_string(T) + " frames is shorter than context " +
                               std::to_string(c));
  return std::max(1, static_cast<int>(std::lround(p * T / c)));
}

namespace {

enum class Weighting { Uniform, Score, InverseScore };

double weight(Weighting w, float s) {
  switch (w) {
    case Weighting::Uniform: return 1.0;
    case Weighting::Score: return std::max(0.0, static_cast<double>(s));
    case Weighting::InverseScore: return std::max(0.0, 1.0 - static_cast<double>(s));
  }
  return 0.0;
}

// One inverse-CDF draw over indices not yet taken.
int draw(std::span<const float> scores, int T, Weighting w, std::vector<char>& taken, Rng& rng,
         SampleDiagnostics* diag) {
  double total = 0.0;
  for (int t = 0; t < T; ++t)
    if (!taken[t]) total += weight(w, w == Weighting::Uniform ? 0.0f : scores[t]);
  if (!(total > 0.0)) {
    static std::atomic<bool> warned{false};
    if (!warned.exchange(true))
      log::warn("mask sampling: all remaining weights are zero, falling back to uniform (reported once)");
    if (diag) ++diag->uniform_fallbacks;
    w = Weighting::Uniform;
    total = 0.0;
    for (int t = 0; t < T; ++t)
      if (!taken[t]) total += 1.0;
  }
  const double u = rng.uniform() * total;
  double cum = 0.0;
  int last = -1;
  for (int t = 0; t < T; ++t) {
    if (taken[t]) continue;
    const double wt = weight(w, w == Weighting::Uniform ? 0.0f : scores[t]);
    if (wt <= 0.0) continue;
    cum += wt;
    last = t;
    if (u < cum) return t;
  }
  return last;  // u landed on the rounding slack past the final bucket
}

}  // namespace

std::vector<int> sample_starts(std::span<const float> scores, int T, int K, MaskStrategy strategy, Rng& rng,
                               SampleDiagnostics* diag) {
  if (T < 0 || K < 0) throw ContractViolation("sample_starts: negative size");
  if (K > T)
    throw ContractViolation("sample_starts: cannot draw " + std::to_string(K) + " distinct starts from " +
                            std::to_string(T) + " frames");
  if (strategy != MaskStrategy::Random) {
    if (scores.empty() && T > 0)
      throw ContractViolation("sample_starts: strategy " + to_string(strategy) + " needs confidence scores");
  }
  if (!scores.empty() && static_cast<int>(scores.size()) != T)
    throw ContractViolation("sample_starts: " + std::to_string(scores.size()) + " scores for " + std::to_string(T) +
                            " frames");

  std::vector<char> taken(static_cast<std::size_t>(T), 0);
  std::vector<int> starts;
  starts.reserve(static_cast<std::size_t>(K));
  auto take = [&](Weighting w, int n) {
    for (int i = 0; i < n; ++i) {
      const int t = draw(scores, T, w, taken, rng, diag);
      taken[t] = 1;
      starts.push_back(t);
    }
  };
  switch (strategy) {
    case MaskStrategy::Random: take(Weighting::Uniform, K); break;
    case MaskStrategy::High: take(Weighting::Score, K); break;
    case MaskStrategy::Low: take(Weighting::InverseScore, K); break;
    case MaskStrategy::Mixed:
      take(Weighting::Score, (K + 1) / 2);
      take(Weighting::InverseScore, K / 2);
      break;
  }
  return starts;
}

MaskPlan expand_mask(std::vector<int> starts, int c, int T) {
  if (c < 1) throw ContractViolation("expand_mask: context must be >= 1");
  MaskPlan plan;
  plan.context = c;
  plan.T = T;
  plan.mask.assign(static_cast<std::size_t>(T), false);
  for (int s : starts) {
    if (s < 0 || s >= T)
      throw ContractViolation("expand_mask: start " + std::to_string(s) + " outside [0, " + std::to_string(T) + ")");
    for (int t = s; t < std::min(s + c, T); ++t) plan.mask[t] = true;
  }
  for (int t = 0; t < T; ++t)
    if (plan.mask[t]) plan.J.push_back(t);
  plan.starts = std::move(starts);
  return plan;
}

MaskPlan plan_mask(std::span<const float> scores, int T, double p, int c, MaskStrategy strategy, Rng& rng,
                   SampleDiagnostics* diag) {
  const int K = num_blocks(T, p, c);
  return expand_mask(sample_starts(scores, T, K, strategy, rng, diag), c, T);
}

MaskStats mask_stats(const MaskPlan& plan, std::span<const float> scores) {
  MaskStats st;
  st.realized_coverage = plan.T > 0 ? static_cast<double>(plan.J.size()) / plan.T : 0.0;
  if (scores.empty() || plan.J.empty()) return st;
  if (static_cast<int>(scores.size()) != plan.T)
    throw ContractViolation("mask_stats: " + std::to_string(scores.size()) + " scores for " + std::to_string(plan.T) +
                            " frames");
  double s = 0.0;
  for (int t : plan.J) s += scores[t];
  st.mean_masked_confidence = s / static_cast<double>(plan.J.size());
  return st;
}

}  // namespace atm::masking
