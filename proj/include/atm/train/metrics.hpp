// Copyright 2026 The atm-msm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <optional>
#include <vector>

#include "atm/msm/step.hpp"

namespace atm::train {

/// Append-only JSON-lines stream; every line is flushed as it is written.
class JsonlWriter {
 public:
  /// Truncates `path` and writes `header` as the first line (unless null).
  static JsonlWriter create(const std::filesystem::path& path, const nlohmann::json& header);
  /// Reopens an existing stream for a run resumed after `last_step`: keeps
  /// the header and every complete record with step <= last_step, drops
  /// anything after (including a truncated final line). Creates the file
  /// with `header` if it does not exist.
  static JsonlWriter resume(const std::filesystem::path& path, std::int64_t last_step, const nlohmann::json& header);

  void write(const nlohmann::json& record);

 private:
  explicit JsonlWriter(const std::filesystem::path& path, std::ios::openmode mode);
  std::filesystem::path path_;
  std::ofstream out_;
};

/// Parses every complete line; a final line without its newline that fails
/// to parse is skipped (a crash mid-write), any other bad line is a
/// FormatError.
std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path);

/// Metrics record for one pretraining step.
nlohmann::json metrics_record(std::int64_t step, const msm::LossBreakdown& b, double lr, double grad_norm,
                              std::optional<double> wall_ms);

}  // namespace atm::train
