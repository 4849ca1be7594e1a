// Copyright 2026 The atm-msm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <json.hpp>
#include <string>
#include <vector>

#include "atm/train/config.hpp"

namespace atm::train {

/// Writes <out>/manifest.jsonl and, unless inline_synth, <out>/wav/<id>.wav.
/// Inline manifests carry the generation parameters instead of audio.
std::filesystem::path cmd_synth_data(const RunConfig& cfg, bool inline_synth = false);

/// <out>/scorer.ckpt and <out>/scorer_log.jsonl.
std::filesystem::path cmd_train_scorer(const RunConfig& cfg, bool resume = false);

/// <out>/confidence.jsonl from scorer.checkpoint over the manifest.
std::filesystem::path cmd_score(const RunConfig& cfg);

/// <out>/metrics.jsonl, <out>/timing.jsonl, <out>/msm.ckpt.
std::filesystem::path cmd_pretrain(const RunConfig& cfg, bool resume = false);

struct SweepRow {
  double fraction = 0.0;
  std::string strategy;
  double final_l_total = 0.0;
  double msm_accuracy = 0.0;
  double realized_coverage = 0.0;
};

/// Duplicated fractions are dropped (first occurrence kept) with a warning.
std::vector<double> dedup_fractions(const std::vector<double>& fractions);

/// One pretraining run per fraction x strategy under <out>/sweep/, summary
/// in <out>/sweep.csv.
std::vector<SweepRow> cmd_sweep(const RunConfig& cfg);
std::string format_sweep_csv(const std::vector<SweepRow>& rows);

/// <out>/mask_plans.jsonl and <out>/mask_summary.json; returns the summary.
nlohmann::json cmd_analyze_mask(const RunConfig& cfg);

/// <out>/probe_report.json and <out>/probe_log.jsonl; returns the report.
nlohmann::json cmd_probe(const RunConfig& cfg);

/// Process exit code for an exception escaping a command.
int exit_code_for(const std::exception& e);

}  // namespace atm::train
