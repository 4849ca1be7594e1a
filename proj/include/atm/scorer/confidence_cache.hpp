// Copyright 2026 The atm-msm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "atm/scorer/scorer.hpp"

namespace atm::scorer {

struct CacheRecord {
  std::string utt_id;
  ConfidenceTrack track;
};

/// JSON lines {"utt_id", "scores", "s_u"}. Floats are written in their
/// shortest round-trip decimal form, so reading the cache back reproduces
/// the exact bits.
void write_confidence_cache(const std::filesystem::path& path, const std::vector<CacheRecord>& records);
std::vector<CacheRecord> read_confidence_cache(const std::filesystem::path& path);

/// One line of the cache; exposed for tests.
std::string format_cache_line(const CacheRecord& rec);
CacheRecord parse_cache_line(const std::string& line);

using ConfidenceIndex = std::map<std::string, ConfidenceTrack>;
ConfidenceIndex index_by_id(std::vector<CacheRecord> records);

}  // namespace atm::scorer
