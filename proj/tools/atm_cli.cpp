// Copyright 2026 The atm-msm Authors
// SPDX-License-Identifier: Apache-2.0

// atm: corpus synthesis, scorer training, confidence scoring, MSM
// pretraining, sweeps, mask analysis and probing from one binary.

#include <CLI11.hpp>
#include <iostream>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "atm/common/error.hpp"
#include "atm/train/commands.hpp"
#include "atm/train/config.hpp"

namespace {

using nlohmann::json;

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> manifest;
  std::optional<std::string> scorer_ckpt;
  std::optional<std::string> cache;
  std::optional<std::string> strategy;
  std::optional<std::string> scale_mode;
  std::optional<std::string> variant;
  std::optional<double> mask_fraction;
  std::optional<std::int64_t> steps;
  std::vector<std::string> sets;
  bool dump = false;
};

void add_common(CLI::App* app, CommonFlags& f) {
  app->add_option("--config", f.config, "JSON config file");
  app->add_option("--seed", f.seed, "Run seed");
  app->add_option("--out", f.out, "Output directory");
  app->add_option("--manifest", f.manifest, "Corpus manifest (JSON lines)");
  app->add_option("--scorer-ckpt", f.scorer_ckpt, "Scorer checkpoint");
  app->add_option("--confidence-cache", f.cache, "Confidence cache (JSON lines)");
  app->add_option("--strategy", f.strategy, "random|high|low|mixed");
  app->add_option("--scale-mode", f.scale_mode, "none|utterance|frame");
  app->add_option("--variant", f.variant, "w2v2|w2v-bert");
  app->add_option("--mask-fraction", f.mask_fraction, "Nominal mask fraction p");
  app->add_option("--steps", f.steps, "Training steps for this command");
  app->add_option("--set", f.sets, "Override a config value: key.path=json");
  app->add_flag("--dump-config", f.dump, "Print the resolved config and exit");
}

std::string kv(const std::string& key, const json& v) { return key + "=" + v.dump(); }

atm::train::RunConfig resolve(const CommonFlags& f, const std::string& steps_key,
                              const std::vector<std::string>& extra) {
  std::vector<std::string> ov;
  if (f.seed) ov.push_back(kv("seed", *f.seed));
  if (f.out) ov.push_back(kv("out", *f.out));
  if (f.manifest) ov.push_back(kv("manifest", *f.manifest));
  if (f.scorer_ckpt) ov.push_back(kv("scorer.checkpoint", *f.scorer_ckpt));
  if (f.cache) ov.push_back(kv("confidence_cache", *f.cache));
  if (f.strategy) ov.push_back(kv("pretrain.strategy", *f.strategy));
  if (f.scale_mode) ov.push_back(kv("pretrain.scale_mode", *f.scale_mode));
  if (f.variant) ov.push_back(kv("msm.variant", *f.variant));
  if (f.mask_fraction) ov.push_back(kv("pretrain.mask_fraction", *f.mask_fraction));
  if (f.steps && !steps_key.empty()) ov.push_back(kv(steps_key, *f.steps));
  ov.insert(ov.end(), extra.begin(), extra.end());
  ov.insert(ov.end(), f.sets.begin(), f.sets.end());
  return atm::train::resolve_config(f.config, ov);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Masked speech model pretraining with confidence-guided masking"};
  app.require_subcommand(0, 1);
  bool top_dump = false;
  app.add_flag("--dump-config", top_dump, "Print the default config and exit");

  CommonFlags f;
  std::string steps_key;
  std::vector<std::string> extra;
  bool resume = false;
  bool inline_synth = false;
  std::optional<int> count;
  std::optional<int> num_labels;
  std::optional<std::string> domain;
  std::optional<std::string> fractions;
  std::optional<std::string> msm_ckpt;

  auto* synth = app.add_subcommand("synth-data", "Generate a synthetic labeled corpus");
  add_common(synth, f);
  synth->add_option("--count", count, "Number of utterances");
  synth->add_option("--num-labels", num_labels, "Label inventory size V");
  synth->add_option("--domain", domain, "clean|shifted");
  synth->add_flag("--inline", inline_synth, "Store generation parameters instead of WAV files");

  auto* train_scorer = app.add_subcommand("train-scorer", "Train the CTC scorer");
  add_common(train_scorer, f);
  train_scorer->add_flag("--resume", resume, "Continue from <out>/scorer.ckpt");

  auto* score = app.add_subcommand("score", "Write the confidence cache for a corpus");
  add_common(score, f);

  auto* pretrain = app.add_subcommand("pretrain", "MSM pretraining");
  add_common(pretrain, f);
  pretrain->add_flag("--resume", resume, "Continue from <out>/msm.ckpt");

  auto* sweep = app.add_subcommand("sweep", "Pretraining sweep over mask fractions and strategies");
  add_common(sweep, f);
  sweep->add_option("--fractions", fractions, "Comma-separated mask fractions");

  auto* analyze = app.add_subcommand("analyze-mask", "Mask statistics per strategy without training");
  add_common(analyze, f);

  auto* probe = app.add_subcommand("probe", "CTC probe on frozen context representations");
  add_common(probe, f);
  probe->add_option("--msm-ckpt", msm_ckpt, "Pretrained MSM checkpoint");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (app.get_subcommands().empty()) {
      if (top_dump) {
        std::cout << atm::train::to_json(atm::train::RunConfig{}).dump(2) << "\n";
        return 0;
      }
      std::cerr << app.help();
      return 2;
    }
    auto* cmd = app.get_subcommands().front();
    const std::string verb = cmd->get_name();
    if (verb == "train-scorer") steps_key = "scorer.steps";
    if (verb == "pretrain") steps_key = "pretrain.steps";
    if (verb == "sweep") steps_key = "sweep.steps";
    if (verb == "probe") steps_key = "probe.steps";
    if (count) extra.push_back(kv("synth.count", *count));
    if (num_labels) extra.push_back(kv("synth.num_labels", *num_labels));
    if (domain) extra.push_back(kv("synth.domain", *domain));
    if (msm_ckpt) extra.push_back(kv("probe.checkpoint", *msm_ckpt));
    if (fractions) {
      json list = json::array();
      for (const auto& part : CLI::detail::split(*fractions, ',')) list.push_back(std::stod(part));
      extra.push_back(kv("sweep.fractions", list));
    }
    const auto cfg = resolve(f, steps_key, extra);
    if (f.dump) {
      std::cout << atm::train::to_json(cfg).dump(2) << "\n";
      return 0;
    }
    namespace tr = atm::train;
    if (verb == "synth-data") {
      std::cout << tr::cmd_synth_data(cfg, inline_synth).string() << "\n";
    } else if (verb == "train-scorer") {
      std::cout << tr::cmd_train_scorer(cfg, resume).string() << "\n";
    } else if (verb == "score") {
      std::cout << tr::cmd_score(cfg).string() << "\n";
    } else if (verb == "pretrain") {
      std::cout << tr::cmd_pretrain(cfg, resume).string() << "\n";
    } else if (verb == "sweep") {
      std::cout << tr::format_sweep_csv(tr::cmd_sweep(cfg));
    } else if (verb == "analyze-mask") {
      std::cout << tr::cmd_analyze_mask(cfg).dump(2) << "\n";
    } else if (verb == "probe") {
      std::cout << tr::cmd_probe(cfg).dump(2) << "\n";
    }
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return atm::train::exit_code_for(e);
  }
}
