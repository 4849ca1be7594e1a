// Copyright 2026 The atm-msm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "atm/common/rng.hpp"

namespace atm::masking {

enum class MaskStrategy { Random, High, Low, Mixed };

std::string to_string(MaskStrategy s);
/// Accepts "random", "high", "low", "mixed"; throws ConfigError otherwise.
MaskStrategy parse_strategy(const std::string& s);
inline constexpr MaskStrategy kAllStrategies[] = {MaskStrategy::Random, MaskStrategy::High, MaskStrategy::Low,
                                                  MaskStrategy::Mixed};

/// K = max(1, round(p T / c)). Throws LengthError when T < c.
int num_blocks(int T, double p, int c);

struct SampleDiagnostics {
  int uniform_fallbacks = 0;  // draws where every remaining weight was zero
};

/// Draws K distinct start indices in [0, T), one at a time, each draw
/// proportional to the strategy's weights renormalized over the indices not
/// yet chosen. High uses s_t, low uses 1 - s_t, mixed takes ceil(K/2) draws
/// by s_t then floor(K/2) by 1 - s_t, random is uniform. `scores` may be
/// empty only for the random strategy. Returned in draw order.
std::vector<int> sample_starts(std::span<const float> scores, int T, int K, MaskStrategy strategy, Rng& rng,
                               SampleDiagnostics* diag = nullptr);

struct MaskPlan {
  std::vector<int> starts;
  int context = 0;
  int T = 0;
  std::vector<bool> mask;  // length T
  std::vector<int> J;      // sorted masked indices
};

/// Union of [i_k, min(i_k + c, T)).
MaskPlan expand_mask(std::vector<int> starts, int c, int T);

/// num_blocks + sample_starts + expand_mask.
MaskPlan plan_mask(std::span<const float> scores, int T, double p, int c, MaskStrategy strategy, Rng& rng,
                   SampleDiagnostics* diag = nullptr);

struct MaskStats {
  double realized_coverage = 0.0;
  std::optional<double> mean_masked_confidence;  // absent without scores or masked frames
};

MaskStats mask_stats(const MaskPlan& plan, std::span<const float> scores);

}  // namespace atm::masking
