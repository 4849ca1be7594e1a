// Copyright 2026 The atm-msm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "atm/features/synth.hpp"
#include "atm/masking/mask.hpp"
#include "atm/msm/model.hpp"
#include "atm/msm/step.hpp"
#include "atm/nn/optim.hpp"
#include "atm/scorer/scorer.hpp"

namespace atm::train {

struct ScorerSection {
  scorer::ScorerConfig model;
  std::int64_t steps = 1500;
  int batch_size = 8;
  nn::AdamConfig adam{.peak_lr = 1e-3, .warmup_steps = 150, .clip_norm = 5.0};
  std::string checkpoint;  // input for score / live scoring
  std::int64_t checkpoint_every = 0;
};

struct PretrainSection {
  masking::MaskStrategy strategy = masking::MaskStrategy::Random;
  double mask_fraction = 0.4;
  int context = 10;
  msm::ScaleMode scale_mode = msm::ScaleMode::None;
  double frame_participation = 0.1;
  std::int64_t steps = 1000;
  int batch_size = 8;
  int n_distractors = 10;
  double kappa = 0.1;
  double diversity_weight = 0.1;
  bool diversity_masked_only = true;
  double tau_start = 2.0;
  double tau_end = 0.5;
  nn::AdamConfig adam{.peak_lr = 1e-3, .warmup_steps = 100, .clip_norm = 5.0};
  std::int64_t checkpoint_every = 0;  // 0: final checkpoint only
  /// Replace every confidence track with this constant (diagnostics).
  std::optional<double> forced_confidence;
  /// Add wall_ms to metrics records; it is always written to timing.jsonl.
  bool metrics_wall_clock = false;
  /// Random crop of each utterance to at most this many feature frames per
  /// step (rounded down to a multiple of 4); 0 trains on whole utterances.
  int max_crop_frames = 0;
};

struct SweepSection {
  std::vector<double> fractions{0.30, 0.40, 0.50};
  std::vector<masking::MaskStrategy> strategies{masking::MaskStrategy::Random, masking::MaskStrategy::High};
  std::optional<std::int64_t> steps;  // defaults to pretrain.steps
};

struct AnalyzeSection {
  std::vector<masking::MaskStrategy> strategies{std::begin(masking::kAllStrategies),
                                                std::end(masking::kAllStrategies)};
  int summary_plans = 10000;
};

struct ProbeSection {
  std::string checkpoint;  // pretrained MSM model; empty probes an untrained encoder
  std::string train_manifest;
  std::vector<std::string> eval_manifests;
  int num_labels = 8;
  std::int64_t steps = 300;
  int batch_size = 8;
  nn::AdamConfig adam{.peak_lr = 3e-3, .warmup_steps = 30, .clip_norm = 5.0};
};

/// Fully resolved run configuration. The top-level seed feeds every
/// component (corpus synthesis, initializations, batching, masking).
struct RunConfig {
  std::uint64_t seed = 1;
  std::string out = "runs/atm";
  std::string manifest;
  std::string confidence_cache;
  features::SynthConfig synth;
  ScorerSection scorer;
  msm::MsmConfig msm;
  PretrainSection pretrain;
  SweepSection sweep;
  AnalyzeSection analyze;
  ProbeSection probe;

  void validate() const;
  /// Sub-configs with the run seed applied.
  features::SynthConfig synth_config() const;
  scorer::ScorerConfig scorer_config() const;
  msm::MsmConfig msm_config() const;
  msm::StepConfig step_config(std::int64_t step, std::int64_t total_steps) const;
};

nlohmann::json to_json(const RunConfig& cfg);
/// Strict parse: unknown keys raise ConfigError.
RunConfig run_config_from_json(const nlohmann::json& j);

/// Defaults, then the file (if any) merged on top, then dotted-path overrides
/// of the form "pretrain.steps=200" (values parsed as JSON, falling back to
/// strings).
RunConfig resolve_config(const std::string& config_path, const std::vector<std::string>& overrides);

}  // namespace atm::train
