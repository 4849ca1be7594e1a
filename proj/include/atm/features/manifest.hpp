// Copyright 2026 The atm-msm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "atm/features/synth.hpp"
#include "atm/features/utterance.hpp"

namespace atm::features {

/// One JSON-lines record: {id, path | synth, labels, domain}. `path` is
/// relative to the manifest's directory; `synth` holds inline generation
/// parameters (SynthConfig fields plus "index").
struct ManifestEntry {
  std::string id;
  std::string path;
  std::optional<nlohmann::json> synth;
  std::vector<int> labels;
  std::string domain = "clean";
};

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);

nlohmann::json synth_config_to_json(const SynthConfig& cfg);
SynthConfig synth_config_from_json(const nlohmann::json& j);

/// Materializes the waveform for an entry (reads the WAV or regenerates the
/// synthetic utterance). Labels and domain come from the manifest record.
Utterance load_entry(const ManifestEntry& entry, const std::filesystem::path& base_dir);

}  // namespace atm::features
