// Copyright 2026 The atm-msm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <json.hpp>
#include <span>
#include <string>
#include <vector>

#include "atm/features/utterance.hpp"
#include "atm/nn/layers.hpp"
#include "atm/nn/optim.hpp"

namespace atm::scorer {

struct ScorerConfig {
  int num_labels = 8;  // V; the blank is class V
  int feature_dim = 80;
  int d_model = 128;
  int heads = 4;
  int blocks = 2;
  int subsample_channels = 16;
  int ff_mult = 4;
  bool conv_module = true;
  int conv_kernel = 5;
  /// Take the confidence max over labels only (ablation; default includes blank).
  bool confidence_excludes_blank = false;
  std::uint64_t seed = 1;

  int blank() const { return num_labels; }
  int classes() const { return num_labels + 1; }
  void validate() const;
};

nlohmann::json to_json(const ScorerConfig& cfg);
ScorerConfig scorer_config_from_json(const nlohmann::json& j);

/// Conv subsampler (x4) + conformer-lite blocks + projection to V+1 logits.
template <typename T>
struct ScorerNet {
  nn::ConvSubsampler<T> frontend;
  nn::BlockStack<T> blocks;
  nn::Linear<T> head;

  ScorerNet() = default;
  ScorerNet(const ScorerConfig& cfg, Rng& rng);
  /// [T', F] features -> [ceil(T'/4), V+1] logits.
  nn::BasicTensor<T> forward(nn::BasicTape<T>& tape, const nn::BasicTensor<T>& features) const;
  void collect(nn::BasicParameterSet<T>& ps) const;
};

/// Row-stochastic [frames, classes] label posteriors.
struct PosteriorGrid {
  int frames = 0;
  int classes = 0;
  std::vector<float> probs;

  float at(int t, int c) const { return probs[static_cast<std::size_t>(t) * classes + c]; }
};

struct ConfidenceTrack {
  std::vector<float> scores;  // s_t per encoded frame
  double utterance_mean = 0.0;  // s_u
};

/// s_u as the mean of the given scores.
ConfidenceTrack make_track(std::vector<float> scores);

/// s_t = max over the row (optionally skipping the blank column).
ConfidenceTrack confidence_from_posteriors(const PosteriorGrid& grid, bool exclude_blank = false, int blank = -1);

class Scorer {
 public:
  explicit Scorer(const ScorerConfig& cfg);

  const ScorerConfig& config() const { return cfg_; }
  nn::ParameterSet& parameters() { return params_; }
  const nn::ParameterSet& parameters() const { return params_; }
  const ScorerNet<float>& net() const { return net_; }

  /// Optimizer steps applied so far; 0 means the network is at initialization.
  std::int64_t steps_trained() const { return steps_trained_; }
  void set_steps_trained(std::int64_t n) { steps_trained_ = n; }
  /// Scoring-time choice; does not affect the network.
  void set_confidence_excludes_blank(bool v) { cfg_.confidence_excludes_blank = v; }

  PosteriorGrid posteriors(const features::FeatureSequence& feats) const;
  ConfidenceTrack score(const features::FeatureSequence& feats) const;

 private:
  ScorerConfig cfg_;
  ScorerNet<float> net_;
  nn::ParameterSet params_;
  std::int64_t steps_trained_ = 0;
};

struct ScorerExample {
  std::string id;
  features::FeatureSequence feats;
  std::vector<int> labels;
};

struct ScorerLogRecord {
  std::int64_t step = 0;
  double loss = 0.0;  // batch mean CTC loss
  double lr = 0.0;
  double grad_norm = 0.0;
};

struct ScorerTrainOptions {
  std::int64_t steps = 1500;  // total; a resumed run continues up to this
  int batch_size = 8;
  nn::AdamConfig adam{.peak_lr = 1e-3, .warmup_steps = 150, .clip_norm = 5.0};
  std::uint64_t seed = 1;
  std::function<void(const ScorerLogRecord&)> on_step;
};

/// Minimizes mean CTC loss with Adam from state.step + 1 through opts.steps.
/// Throws DataError before any update if an example carries no labels.
std::vector<ScorerLogRecord> train_scorer(Scorer& scorer, nn::OptimizerState& state,
                                          const std::vector<ScorerExample>& corpus, const ScorerTrainOptions& opts);

/// Checkpoint with meta {"kind": "scorer", "config", "steps_trained"} and,
/// when given, the optimizer moments.
void save_scorer(const std::filesystem::path& path, const Scorer& scorer, const nn::OptimizerState* state = nullptr,
                 const nlohmann::json& extra_meta = nlohmann::json::object());
Scorer load_scorer(const std::filesystem::path& path, nn::OptimizerState* state = nullptr);

}  // namespace atm::scorer
