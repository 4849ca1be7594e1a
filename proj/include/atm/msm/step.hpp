// Copyright 2026 The atm-msm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "atm/features/utterance.hpp"
#include "atm/masking/mask.hpp"
#include "atm/msm/model.hpp"
#include "atm/scorer/scorer.hpp"

namespace atm::msm {

struct StepConfig {
  masking::MaskStrategy strategy = masking::MaskStrategy::Random;
  double mask_fraction = 0.4;
  int context = 10;
  ScaleMode scale_mode = ScaleMode::None;
  double frame_participation = 0.1;
  int n_distractors = 10;
  double kappa = 0.1;
  double diversity_weight = 0.1;
  /// Diversity over masked frames only (default) or over every frame.
  bool diversity_masked_only = true;
  double tau = 2.0;
  bool gumbel_noise = true;
  /// Straight-through one-hot codes. Disabling it quantizes with the soft
  /// distribution, which makes the step exactly differentiable (used by the
  /// finite-difference checks).
  bool hard_quantizer = true;
  std::uint64_t seed = 1;
  std::int64_t step = 1;  // keys every random draw together with the utterance id
};

struct MsmExample {
  std::string id;
  features::FeatureSequence feats;
  std::optional<scorer::ConfidenceTrack> track;
};

struct LossBreakdown {
  double l_ctr = 0.0;
  double l_div = 0.0;
  double l_ce = 0.0;
  double l_total = 0.0;
  double l_scaled = 0.0;
  double codebook_usage_pct = 0.0;
  int unique_codes = 0;
  double msm_accuracy = 0.0;
  double realized_coverage = 0.0;
  std::optional<double> mean_masked_confidence;
  int masked_frames = 0;
  int total_frames = 0;
  int sampler_fallbacks = 0;
  int distractor_clamps = 0;
  double tau = 0.0;
};

/// Random window of at most `max_frames` feature frames. The start is a
/// multiple of 4 so the confidence track stays aligned with the encoded
/// frames; the track is sliced to match. Returns a copy when no crop applies.
MsmExample crop_example(const MsmExample& ex, int max_frames, Rng& rng);

template <typename T>
struct MsmForward {
  nn::BasicTensor<T> loss;  // the scaled objective, batch mean
  LossBreakdown breakdown;
  std::vector<std::vector<int>> targets;  // per utterance, all frames
};

/// Full forward pass for a batch: encode, mask, quantize the unmasked E,
/// context network(s), per-variant losses, confidence scaling and batch mean.
template <typename T>
MsmForward<T> msm_forward(nn::BasicTape<T>& tape, const MsmNet<T>& net, std::span<const MsmExample* const> batch,
                          const StepConfig& cfg);

/// msm_forward + backward into the parameter gradients (zeroed first).
LossBreakdown msm_step(MsmModel& model, std::span<const MsmExample* const> batch, const StepConfig& cfg);

}  // namespace atm::msm
