// Copyright 2026 The atm-msm Authors
// SPDX-License-Identifier: Apache-2.0

#include "atm/scorer/confidence_cache.hpp"

#include <charconv>
#include <fstream>
#include <json.hpp>

#include "atm/common/error.hpp"

namespace atm::scorer {
namespace {

template <typename F>
void append_number(std::string& out, F v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw IoError("confidence cache: cannot format number");
  out.append(buf, end);
}

std::string json_escape(const std::string& s) { return nlohmann::json(s).dump(); }

template <typename F>
F parse_number(const nlohmann::json& raw) {
  // nlohmann parses into double; re-read the token text so float values keep
  // the exact bits they were written with.
  const std::string text = raw.dump();
  F v{};
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size())
    throw FormatError("confidence cache: bad number '" + text + "'");
  return v;
}

}  // namespace

std::string format_cache_line(const CacheRecord& rec) {
  std::string out = "{\"utt_id\":" + json_escape(rec.utt_id) + ",\"scores\":[";
  for (std::size_t i = 0; i < rec.track.scores.size(); ++i) {
    if (i) out += ',';
    append_number(out, rec.track.scores[i]);
  }
  out += "],\"s_u\":";
  append_number(out, rec.track.utterance_mean);
  out += '}';
  return out;
}

CacheRecord parse_cache_line(const std::string& line) {
  // Scores are parsed from the raw text: parsing them as double and casting
  // back to float could double-round.
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("confidence cache: ") + e.what());
  }
  if (!j.is_object() || !j.contains("utt_id") || !j.contains("scores") || !j.contains("s_u"))
    throw FormatError("confidence cache: record needs utt_id, scores and s_u");
  CacheRecord rec;
  rec.utt_id = j.at("utt_id").get<std::string>();
  const auto open = line.find('[', line.find("\"scores\""));
  const auto close = line.find(']', open);
  if (open == std::string::npos || close == std::string::npos) throw FormatError("confidence cache: bad scores array");
  const char* p = line.data() + open + 1;
  const char* end = line.data() + close;
  while (p < end) {
    while (p < end && (*p == ',' || *p == ' ')) ++p;
    if (p >= end) break;
    float v{};
    auto [next, ec] = std::from_chars(p, end, v);
    if (ec != std::errc()) throw FormatError("confidence cache: bad score in record " + rec.utt_id);
    rec.track.scores.push_back(v);
    p = next;
  }
  if (rec.track.scores.size() != j.at("scores").size())
    throw FormatError("confidence cache: score count mismatch in record " + rec.utt_id);
  rec.track.utterance_mean = parse_number<double>(j.at("s_u"));
  return rec;
}

void write_confidence_cache(const std::filesystem::path& path, const std::vector<CacheRecord>& records) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write confidence cache " + path.string());
  for (const auto& r : records) out << format_cache_line(r) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

std::vector<CacheRecord> read_confidence_cache(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read confidence cache " + path.string());
  std::vector<CacheRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(parse_cache_line(line));
  }
  return out;
}

ConfidenceIndex index_by_id(std::vector<CacheRecord> records) {
  ConfidenceIndex idx;
  for (auto& r : records) {
    if (idx.count(r.utt_id)) throw DataError("confidence cache: duplicate utt_id " + r.utt_id);
    idx.emplace(r.utt_id, std::move(r.track));
  }
  return idx;
}

}  // namespace atm::scorer
