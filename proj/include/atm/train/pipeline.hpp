// Copyright 2026 The atm-msm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <string>
#include <vector>

#include "atm/features/utterance.hpp"
#include "atm/msm/model.hpp"
#include "atm/msm/step.hpp"
#include "atm/scorer/confidence_cache.hpp"
#include "atm/scorer/scorer.hpp"
#include "atm/train/config.hpp"

namespace atm::train {

struct FeaturizedUtterance {
  std::string id;
  std::string domain;
  std::vector<int> labels;
  features::FeatureSequence feats;  // per-utterance mean/variance normalized log-Mel
};

/// Loads every manifest entry and extracts features (parallel over
/// utterances). A missing manifest raises IoError naming the path.
std::vector<FeaturizedUtterance> featurize_manifest(const std::filesystem::path& manifest);
std::vector<FeaturizedUtterance> featurize(const std::vector<features::Utterance>& utts);

/// Confidence tracks for a corpus (parallel; read-only on the scorer).
std::vector<scorer::CacheRecord> score_corpus(const scorer::Scorer& scorer,
                                              const std::vector<FeaturizedUtterance>& corpus);

/// Trains (or resumes) the scorer; writes scorer.ckpt and scorer_log.jsonl
/// under out_dir.
scorer::Scorer run_train_scorer(const RunConfig& cfg, const std::vector<FeaturizedUtterance>& corpus,
                                const std::filesystem::path& out_dir, bool resume);

/// Confidence tracks for pretraining according to the config: a constant
/// forced track, the confidence cache, or live scoring with the scorer
/// checkpoint. Empty when none is configured and the run does not need one.
scorer::ConfidenceIndex pretrain_tracks(const RunConfig& cfg, const std::vector<FeaturizedUtterance>& corpus);

struct PretrainResult {
  std::vector<nlohmann::json> records;  // one per step run in this call
  std::filesystem::path checkpoint;
};

/// MSM pretraining; writes metrics.jsonl, timing.jsonl and msm.ckpt under
/// out_dir. With `resume`, continues from an existing msm.ckpt.
PretrainResult run_pretrain(const RunConfig& cfg, const std::vector<FeaturizedUtterance>& corpus,
                            const scorer::ConfidenceIndex& tracks, const std::filesystem::path& out_dir, bool resume);

void save_msm(const std::filesystem::path& path, const msm::MsmModel& model, const nn::OptimizerState* state,
              const nlohmann::json& run_config);
msm::MsmModel load_msm(const std::filesystem::path& path, nn::OptimizerState* state = nullptr);

/// One mask plan per (utterance, strategy) into `rows`, plus a summary over
/// cfg.analyze.summary_plans plans per strategy with pairwise one-sided
/// Welch tests of mean masked confidence.
nlohmann::json analyze_masks(const RunConfig& cfg, const scorer::ConfidenceIndex& tracks,
                             std::vector<nlohmann::json>& rows);

/// Linear + CTC head trained on frozen context-network outputs; greedy TER
/// per domain of the eval corpora.
nlohmann::json run_probe(const RunConfig& cfg, const msm::MsmModel& model,
                         const std::vector<FeaturizedUtterance>& train_corpus,
                         const std::vector<FeaturizedUtterance>& eval_corpus, const std::filesystem::path& out_dir);

}  // namespace atm::train
