// Copyright 2026 The atm-msm Authors
// SPDX-License-Identifier: Apache-2.0

#include "atm/train/commands.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <numeric>

#include "atm/common/error.hpp"
#include "atm/common/log.hpp"
#include "atm/features/manifest.hpp"
#include "atm/features/synth.hpp"
#include "atm/features/wav.hpp"
#include "atm/train/metrics.hpp"
#include "atm/train/pipeline.hpp"

namespace atm::train {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

std::string shortest(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return ec == std::errc() ? std::string(buf, end) : std::string("nan");
}

fs::path out_dir(const RunConfig& cfg) {
  fs::path p(cfg.out);
  fs::create_directories(p);
  return p;
}

void require_manifest(const RunConfig& cfg, const std::string& verb) {
  if (cfg.manifest.empty()) throw ConfigError(verb + ": no manifest configured (set manifest or --manifest)");
}

}  // namespace

fs::path cmd_synth_data(const RunConfig& cfg, bool inline_synth) {
  const auto scfg = cfg.synth_config();
  scfg.validate();
  const auto out = out_dir(cfg);
  std::vector<features::ManifestEntry> entries;
  if (!inline_synth && scfg.count > 0) fs::create_directories(out / "wav");
  for (int i = 0; i < scfg.count; ++i) {
    const auto s = features::synth_one(scfg, i);
    features::ManifestEntry e;
    e.id = s.utt.id;
    e.labels = s.utt.labels;
    e.domain = s.utt.domain;
    if (inline_synth) {
      auto desc = features::synth_config_to_json(scfg);
      desc["index"] = i;
      e.synth = desc;
    } else {
      e.path = "wav/" + e.id + ".wav";
      features::write_wav(out / e.path, s.utt.samples, s.utt.sample_rate);
    }
    entries.push_back(std::move(e));
  }
  const auto manifest = out / "manifest.jsonl";
  features::write_manifest(manifest, entries);
  log::info("synth-data: wrote " + std::to_string(entries.size()) + " utterances to " + manifest.string());
  return manifest;
}

fs::path cmd_train_scorer(const RunConfig& cfg, bool resume) {
  require_manifest(cfg, "train-scorer");
  const auto corpus = featurize_manifest(cfg.manifest);
  const auto out = out_dir(cfg);
  run_train_scorer(cfg, corpus, out, resume);
  return out / "scorer.ckpt";
}

fs::path cmd_score(const RunConfig& cfg) {
  require_manifest(cfg, "score");
  if (cfg.scorer.checkpoint.empty()) throw ConfigError("score: scorer.checkpoint is not set");
  if (!fs::exists(cfg.scorer.checkpoint)) throw IoError("scorer checkpoint not found: " + cfg.scorer.checkpoint);
  auto sc = scorer::load_scorer(cfg.scorer.checkpoint);
  sc.set_confidence_excludes_blank(cfg.scorer.model.confidence_excludes_blank);
  if (sc.steps_trained() == 0) log::warn("score: checkpoint is untrained (0 optimizer steps)");
  const auto corpus = featurize_manifest(cfg.manifest);
  const auto path = out_dir(cfg) / "confidence.jsonl";
  scorer::write_confidence_cache(path, score_corpus(sc, corpus));
  return path;
}

fs::path cmd_pretrain(const RunConfig& cfg, bool resume) {
  require_manifest(cfg, "pretrain");
  const auto corpus = featurize_manifest(cfg.manifest);
  const auto tracks = pretrain_tracks(cfg, corpus);
  const auto out = out_dir(cfg);
  run_pretrain(cfg, corpus, tracks, out, resume);
  return out / "metrics.jsonl";
}

std::vector<double> dedup_fractions(const std::vector<double>& fractions) {
  std::vector<double> out;
  for (double f : fractions) {
    if (std::find(out.begin(), out.end(), f) != out.end()) {
      log::warn("sweep: dropping duplicate fraction " + shortest(f));
      continue;
    }
    out.push_back(f);
  }
  return out;
}

std::string format_sweep_csv(const std::vector<SweepRow>& rows) {
  std::string s = "fraction,strategy,final_l_total,msm_accuracy,realized_coverage\n";
  for (const auto& r : rows)
    s += shortest(r.fraction) + "," + r.strategy + "," + shortest(r.final_l_total) + "," + shortest(r.msm_accuracy) +
         "," + shortest(r.realized_coverage) + "\n";
  return s;
}

std::vector<SweepRow> cmd_sweep(const RunConfig& cfg) {
  require_manifest(cfg, "sweep");
  const auto fractions = dedup_fractions(cfg.sweep.fractions);
  const auto corpus = featurize_manifest(cfg.manifest);
  auto track_cfg = cfg;
  const bool need = std::any_of(cfg.sweep.strategies.begin(), cfg.sweep.strategies.end(),
                                [](auto s) { return s != masking::MaskStrategy::Random; });
  track_cfg.pretrain.strategy = need ? masking::MaskStrategy::High : masking::MaskStrategy::Random;
  const auto tracks = pretrain_tracks(track_cfg, corpus);
  const auto out = out_dir(cfg);

  std::vector<SweepRow> rows;
  for (double f : fractions) {
    for (auto strat : cfg.sweep.strategies) {
      auto run = cfg;
      run.pretrain.mask_fraction = f;
      run.pretrain.strategy = strat;
      if (cfg.sweep.steps) run.pretrain.steps = *cfg.sweep.steps;
      run.validate();
      const auto dir = out / "sweep" / (masking::to_string(strat) + "-p" + shortest(f));
      const auto res = run_pretrain(run, corpus, tracks, dir, false);
      SweepRow row;
      row.fraction = f;
      row.strategy = masking::to_string(strat);
      // "final" = mean over the last min(20, steps) steps; coverage over the whole run.
      const auto n = res.records.size();
      const auto tail = std::min<std::size_t>(20, n);
      double cov = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const auto& r = res.records[i];
        cov += r["realized_coverage"].get<double>();
        if (i + tail >= n) {
          row.final_l_total += r["l_total"].get<double>();
          row.msm_accuracy += r["msm_accuracy"].get<double>();
        }
      }
      if (n > 0) {
        row.final_l_total /= static_cast<double>(tail);
        row.msm_accuracy /= static_cast<double>(tail);
        row.realized_coverage = cov / static_cast<double>(n);
      }
      rows.push_back(row);
    }
  }
  write_text(out / "sweep.csv", format_sweep_csv(rows));
  return rows;
}

json cmd_analyze_mask(const RunConfig& cfg) {
  if (cfg.confidence_cache.empty()) throw ConfigError("analyze-mask: confidence_cache is not set");
  if (!fs::exists(cfg.confidence_cache)) throw IoError("confidence cache not found: " + cfg.confidence_cache);
  const auto tracks = scorer::index_by_id(scorer::read_confidence_cache(cfg.confidence_cache));
  std::vector<json> rows;
  auto summary = analyze_masks(cfg, tracks, rows);
  const auto out = out_dir(cfg);
  auto w = JsonlWriter::create(out / "mask_plans.jsonl", json());
  for (const auto& r : rows) w.write(r);
  write_text(out / "mask_summary.json", summary.dump(2) + "\n");
  return summary;
}

json cmd_probe(const RunConfig& cfg) {
  const std::string train_manifest = cfg.probe.train_manifest.empty() ? cfg.manifest : cfg.probe.train_manifest;
  if (train_manifest.empty()) throw ConfigError("probe: no training manifest (probe.train_manifest or manifest)");
  auto model = [&] {
    if (cfg.probe.checkpoint.empty()) {
      log::warn("probe: no checkpoint given, probing an untrained encoder");
      return msm::MsmModel(cfg.msm_config());
    }
    if (!fs::exists(cfg.probe.checkpoint)) throw IoError("MSM checkpoint not found: " + cfg.probe.checkpoint);
    auto m = load_msm(cfg.probe.checkpoint);
    const auto& a = m.config();
    if (a.variant != cfg.msm.variant || a.d_model != cfg.msm.d_model || a.codebook_size != cfg.msm.codebook_size)
      throw ShapeError("probe: checkpoint " + cfg.probe.checkpoint + " (" + msm::to_string(a.variant) + ", d=" +
                       std::to_string(a.d_model) + ") does not match the configured model (" +
                       msm::to_string(cfg.msm.variant) + ", d=" + std::to_string(cfg.msm.d_model) + ")");
    return m;
  }();
  const auto train = featurize_manifest(train_manifest);
  std::vector<FeaturizedUtterance> eval;
  const auto eval_paths = cfg.probe.eval_manifests.empty() ? std::vector<std::string>{train_manifest}
                                                           : cfg.probe.eval_manifests;
  for (const auto& p : eval_paths) {
    auto part = featurize_manifest(p);
    std::move(part.begin(), part.end(), std::back_inserter(eval));
  }
  const auto out = out_dir(cfg);
  auto report = run_probe(cfg, model, train, eval, out);
  report["checkpoint"] = cfg.probe.checkpoint;
  write_text(out / "probe_report.json", report.dump(2) + "\n");
  return report;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return 2;
  if (dynamic_cast<const IoError*>(&e)) return 3;
  if (dynamic_cast<const DataError*>(&e)) return 4;
  if (dynamic_cast<const ShapeError*>(&e)) return 5;
  if (dynamic_cast<const FormatError*>(&e)) return 6;
  return 1;
}

}  // namespace atm::train
