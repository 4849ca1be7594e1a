// Copyright 2026 The atm-msm Authors
// SPDX-License-Identifier: Apache-2.0

#include "atm/train/metrics.hpp"

#include <sstream>

#include "atm/common/error.hpp"

namespace atm::train {

using nlohmann::json;

JsonlWriter::JsonlWriter(const std::filesystem::path& path, std::ios::openmode mode)
    : path_(path), out_(path, mode | std::ios::binary) {
  if (!out_) throw IoError("cannot open " + path.string() + " for writing");
}

JsonlWriter JsonlWriter::create(const std::filesystem::path& path, const json& header) {
  JsonlWriter w(path, std::ios::out | std::ios::trunc);
  if (!header.is_null()) w.write(header);
  return w;
}

JsonlWriter JsonlWriter::resume(const std::filesystem::path& path, std::int64_t last_step, const json& header) {
  if (!std::filesystem::exists(path)) return create(path, header);
  std::string kept;
  {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    const std::string text = ss.str();
    std::size_t pos = 0;
    while (pos < text.size()) {
      const auto nl = text.find('\n', pos);
      if (nl == std::string::npos) break;  // truncated tail
      const std::string line = text.substr(pos, nl - pos);
      pos = nl + 1;
      if (line.empty()) continue;
      json rec;
      try {
        rec = json::parse(line);
      } catch (const json::exception&) {
        throw FormatError("corrupt record in " + path.string());
      }
      if (rec.contains("step") && rec["step"].get<std::int64_t>() > last_step) break;
      kept += line;
      kept += '\n';
    }
  }
  if (kept.empty() && !header.is_null()) kept = header.dump() + "\n";
  JsonlWriter w(path, std::ios::out | std::ios::trunc);
  w.out_ << kept;
  w.out_.flush();
  return w;
}

void JsonlWriter::write(const json& record) {
  out_ << record.dump() << '\n';
  out_.flush();
  if (!out_) throw IoError("write failed for " + path_.string());
}

std::vector<json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();
  std::vector<json> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const auto nl = text.find('\n', pos);
    const bool complete = nl != std::string::npos;
    const std::string line = text.substr(pos, complete ? nl - pos : std::string::npos);
    pos = complete ? nl + 1 : text.size();
    if (line.empty()) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::exception&) {
      if (complete) throw FormatError("corrupt record in " + path.string());
    }
  }
  return out;
}

json metrics_record(std::int64_t step, const msm::LossBreakdown& b, double lr, double grad_norm,
                    std::optional<double> wall_ms) {
  json r = {{"step", step},
            {"l_ctr", b.l_ctr},
            {"l_div", b.l_div},
            {"l_ce", b.l_ce},
            {"l_total", b.l_total},
            {"l_scaled", b.l_scaled},
            {"codebook_usage_pct", b.codebook_usage_pct},
            {"msm_accuracy", b.msm_accuracy},
            {"realized_coverage", b.realized_coverage},
            {"mean_masked_confidence", b.mean_masked_confidence ? json(*b.mean_masked_confidence) : json(nullptr)},
            {"tau", b.tau},
            {"lr", lr},
            {"grad_norm", grad_norm}};
  if (wall_ms) r["wall_ms"] = *wall_ms;
  return r;
}

}  // namespace atm::train
