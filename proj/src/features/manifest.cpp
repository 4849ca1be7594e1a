// Copyright 2026 The atm-msm Authors
// SPDX-License-Identifier: Apache-2.0

#include "atm/features/manifest.hpp"

#include <fstream>

#include "atm/common/error.hpp"
#include "atm/features/wav.hpp"

namespace atm::features {

nlohmann::json synth_config_to_json(const SynthConfig& c) {
  return {{"num_labels", c.num_labels},       {"count", c.count},
          {"min_duration_s", c.min_duration_s}, {"max_duration_s", c.max_duration_s},
          {"min_segment_s", c.min_segment_s},   {"max_segment_s", c.max_segment_s},
          {"domain", c.domain},                 {"clean_snr_db", c.clean_snr_db},
          {"shifted_snr_db", c.shifted_snr_db}, {"shifted_offset_hz", c.shifted_offset_hz},
          {"amplitude", c.amplitude},           {"seed", c.seed},
          {"id_prefix", c.id_prefix}};
}

SynthConfig synth_config_from_json(const nlohmann::json& j) {
  SynthConfig c;
  c.num_labels = j.value("num_labels", c.num_labels);
  c.count = j.value("count", c.count);
  c.min_duration_s = j.value("min_duration_s", c.min_duration_s);
  c.max_duration_s = j.value("max_duration_s", c.max_duration_s);
  c.min_segment_s = j.value("min_segment_s", c.min_segment_s);
  c.max_segment_s = j.value("max_segment_s", c.max_segment_s);
  c.domain = j.value("domain", c.domain);
  c.clean_snr_db = j.value("clean_snr_db", c.clean_snr_db);
  c.shifted_snr_db = j.value("shifted_snr_db", c.shifted_snr_db);
  c.shifted_offset_hz = j.value("shifted_offset_hz", c.shifted_offset_hz);
  c.amplitude = j.value("amplitude", c.amplitude);
  c.seed = j.value("seed", c.seed);
  c.id_prefix = j.value("id_prefix", c.id_prefix);
  return c;
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("manifest: cannot open " + path.string());
  std::vector<ManifestEntry> out;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("manifest " + path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    ManifestEntry e;
    if (!j.contains("id")) throw FormatError("manifest " + path.string() + ":" + std::to_string(lineno) + ": missing id");
    e.id = j.at("id").get<std::string>();
    e.path = j.value("path", std::string());
    if (j.contains("synth")) e.synth = j.at("synth");
    if (e.path.empty() && !e.synth)
      throw FormatError("manifest " + path.string() + ":" + std::to_string(lineno) + ": record needs path or synth");
    if (j.contains("labels") && !j.at("labels").is_null()) e.labels = j.at("labels").get<std::vector<int>>();
    e.domain = j.value("domain", std::string("clean"));
    out.push_back(std::move(e));
  }
  return out;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("manifest: cannot open " + path.string() + " for writing");
  for (const auto& e : entries) {
    nlohmann::json j;
    j["id"] = e.id;
    if (!e.path.empty()) j["path"] = e.path;
    if (e.synth) j["synth"] = *e.synth;
    j["labels"] = e.labels;
    j["domain"] = e.domain;
    os << j.dump() << '\n';
  }
  if (!os) throw IoError("manifest: write failed for " + path.string());
}

Utterance load_entry(const ManifestEntry& entry, const std::filesystem::path& base_dir) {
  Utterance u;
  if (!entry.path.empty()) {
    std::filesystem::path p(entry.path);
    if (p.is_relative()) p = base_dir / p;
    u = load_wav(p);
  } else {
    const auto cfg = synth_config_from_json(*entry.synth);
    u = synth_one(cfg, entry.synth->value("index", 0)).utt;
  }
  u.id = entry.id;
  u.labels = entry.labels;
  u.domain = entry.domain;
  return u;
}

}  // namespace atm::features
