// Copyright 2026 The atm-msm Authors
// SPDX-License-Identifier: Apache-2.0

#include "atm/train/config.hpp"

#include <filesystem>
#include <fstream>

#include "atm/common/error.hpp"
#include "atm/features/manifest.hpp"

namespace atm::train {

using nlohmann::json;

namespace {

json adam_json(const nn::AdamConfig& a) {
  return {{"peak_lr", a.peak_lr}, {"warmup_steps", a.warmup_steps}, {"clip_norm", a.clip_norm}};
}

void read_adam(const json& j, nn::AdamConfig& a) {
  a.peak_lr = j.at("peak_lr").get<double>();
  a.warmup_steps = j.at("warmup_steps").get<std::int64_t>();
  a.clip_norm = j.at("clip_norm").get<double>();
}

json strategies_json(const std::vector<masking::MaskStrategy>& v) {
  json a = json::array();
  for (auto s : v) a.push_back(masking::to_string(s));
  return a;
}

std::vector<masking::MaskStrategy> read_strategies(const json& j) {
  std::vector<masking::MaskStrategy> v;
  for (const auto& s : j) v.push_back(masking::parse_strategy(s.get<std::string>()));
  return v;
}

json without_seed(json j) {
  j.erase("seed");
  return j;
}

// Every key in `user` must exist in `schema`; nested objects are checked
// recursively. Values may change type only between null and non-null.
void check_keys(const json& user, const json& schema, const std::string& path) {
  if (!user.is_object()) throw ConfigError("config: " + (path.empty() ? "document" : path) + " must be an object");
  for (auto it = user.begin(); it != user.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!schema.contains(it.key())) throw ConfigError("config: unknown key '" + key + "'");
    const auto& s = schema.at(it.key());
    if (s.is_object()) check_keys(it.value(), s, key);
  }
}

void merge_into(json& base, const json& patch) {
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    if (it.value().is_object() && base.contains(it.key()) && base[it.key()].is_object())
      merge_into(base[it.key()], it.value());
    else
      base[it.key()] = it.value();
  }
}

}  // namespace

json to_json(const RunConfig& c) {
  json scorer = without_seed(scorer::to_json(c.scorer.model));
  scorer["steps"] = c.scorer.steps;
  scorer["batch_size"] = c.scorer.batch_size;
  scorer["adam"] = adam_json(c.scorer.adam);
  scorer["checkpoint"] = c.scorer.checkpoint;
  scorer["checkpoint_every"] = c.scorer.checkpoint_every;

  const auto& p = c.pretrain;
  json pretrain = {{"strategy", masking::to_string(p.strategy)},
                   {"mask_fraction", p.mask_fraction},
                   {"context", p.context},
                   {"scale_mode", msm::to_string(p.scale_mode)},
                   {"frame_participation", p.frame_participation},
                   {"steps", p.steps},
                   {"batch_size", p.batch_size},
                   {"n_distractors", p.n_distractors},
                   {"kappa", p.kappa},
                   {"diversity_weight", p.diversity_weight},
                   {"diversity_masked_only", p.diversity_masked_only},
                   {"tau_start", p.tau_start},
                   {"tau_end", p.tau_end},
                   {"adam", adam_json(p.adam)},
                   {"checkpoint_every", p.checkpoint_every},
                   {"forced_confidence", p.forced_confidence ? json(*p.forced_confidence) : json(nullptr)},
                   {"metrics_wall_clock", p.metrics_wall_clock},
                   {"max_crop_frames", p.max_crop_frames}};

  json sweep = {{"fractions", c.sweep.fractions},
                {"strategies", strategies_json(c.sweep.strategies)},
                {"steps", c.sweep.steps ? json(*c.sweep.steps) : json(nullptr)}};
  json analyze = {{"strategies", strategies_json(c.analyze.strategies)}, {"summary_plans", c.analyze.summary_plans}};
  json probe = {{"checkpoint", c.probe.checkpoint},   {"train_manifest", c.probe.train_manifest},
                {"eval_manifests", c.probe.eval_manifests}, {"num_labels", c.probe.num_labels},
                {"steps", c.probe.steps},             {"batch_size", c.probe.batch_size},
                {"adam", adam_json(c.probe.adam)}};

  return {{"seed", c.seed},
          {"out", c.out},
          {"manifest", c.manifest},
          {"confidence_cache", c.confidence_cache},
          {"synth", without_seed(features::synth_config_to_json(c.synth))},
          {"scorer", scorer},
          {"msm", without_seed(msm::to_json(c.msm))},
          {"pretrain", pretrain},
          {"sweep", sweep},
          {"analyze", analyze},
          {"probe", probe}};
}

RunConfig run_config_from_json(const json& user) {
  const json defaults = to_json(RunConfig{});
  check_keys(user, defaults, "");
  json j = defaults;
  merge_into(j, user);
  RunConfig c;
  try {
    c.seed = j.at("seed").get<std::uint64_t>();
    c.out = j.at("out").get<std::string>();
    c.manifest = j.at("manifest").get<std::string>();
    c.confidence_cache = j.at("confidence_cache").get<std::string>();
    c.synth = features::synth_config_from_json(j.at("synth"));
    const auto& s = j.at("scorer");
    c.scorer.model = scorer::scorer_config_from_json(s);
    c.scorer.steps = s.at("steps").get<std::int64_t>();
    c.scorer.batch_size = s.at("batch_size").get<int>();
    read_adam(s.at("adam"), c.scorer.adam);
    c.scorer.checkpoint = s.at("checkpoint").get<std::string>();
    c.scorer.checkpoint_every = s.at("checkpoint_every").get<std::int64_t>();
    c.msm = msm::msm_config_from_json(j.at("msm"));
    const auto& p = j.at("pretrain");
    c.pretrain.strategy = masking::parse_strategy(p.at("strategy").get<std::string>());
    c.pretrain.mask_fraction = p.at("mask_fraction").get<double>();
    c.pretrain.context = p.at("context").get<int>();
    c.pretrain.scale_mode = msm::parse_scale_mode(p.at("scale_mode").get<std::string>());
    c.pretrain.frame_participation = p.at("frame_participation").get<double>();
    c.pretrain.steps = p.at("steps").get<std::int64_t>();
    c.pretrain.batch_size = p.at("batch_size").get<int>();
    c.pretrain.n_distractors = p.at("n_distractors").get<int>();
    c.pretrain.kappa = p.at("kappa").get<double>();
    c.pretrain.diversity_weight = p.at("diversity_weight").get<double>();
    c.pretrain.diversity_masked_only = p.at("diversity_masked_only").get<bool>();
    c.pretrain.tau_start = p.at("tau_start").get<double>();
    c.pretrain.tau_end = p.at("tau_end").get<double>();
    read_adam(p.at("adam"), c.pretrain.adam);
    c.pretrain.checkpoint_every = p.at("checkpoint_every").get<std::int64_t>();
    if (!p.at("forced_confidence").is_null()) c.pretrain.forced_confidence = p.at("forced_confidence").get<double>();
    c.pretrain.metrics_wall_clock = p.at("metrics_wall_clock").get<bool>();
    c.pretrain.max_crop_frames = p.at("max_crop_frames").get<int>();
    const auto& sw = j.at("sweep");
    c.sweep.fractions = sw.at("fractions").get<std::vector<double>>();
    c.sweep.strategies = read_strategies(sw.at("strategies"));
    if (!sw.at("steps").is_null()) c.sweep.steps = sw.at("steps").get<std::int64_t>();
    const auto& an = j.at("analyze");
    c.analyze.strategies = read_strategies(an.at("strategies"));
    c.analyze.summary_plans = an.at("summary_plans").get<int>();
    const auto& pr = j.at("probe");
    c.probe.checkpoint = pr.at("checkpoint").get<std::string>();
    c.probe.train_manifest = pr.at("train_manifest").get<std::string>();
    c.probe.eval_manifests = pr.at("eval_manifests").get<std::vector<std::string>>();
    c.probe.num_labels = pr.at("num_labels").get<int>();
    c.probe.steps = pr.at("steps").get<std::int64_t>();
    c.probe.batch_size = pr.at("batch_size").get<int>();
    read_adam(pr.at("adam"), c.probe.adam);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

void RunConfig::validate() const {
  synth_config().validate();
  scorer_config().validate();
  msm_config().validate();
  const auto& p = pretrain;
  if (!(p.mask_fraction > 0.0 && p.mask_fraction <= 1.0)) throw ConfigError("pretrain.mask_fraction must be in (0, 1]");
  if (p.context < 1) throw ConfigError("pretrain.context must be >= 1");
  if (p.max_crop_frames != 0 && p.max_crop_frames < 4 * p.context)
    throw ConfigError("pretrain.max_crop_frames must be 0 (off) or at least 4 * context");
  if (!(p.frame_participation >= 0.0 && p.frame_participation <= 1.0))
    throw ConfigError("pretrain.frame_participation must be in [0, 1]");
  if (p.steps < 0 || p.batch_size < 1) throw ConfigError("pretrain.steps must be >= 0 and batch_size >= 1");
  if (p.n_distractors < 0 || !(p.kappa > 0.0)) throw ConfigError("pretrain: n_distractors >= 0 and kappa > 0 required");
  if (!(p.tau_start > 0.0 && p.tau_end > 0.0)) throw ConfigError("pretrain: temperatures must be positive");
  if (p.forced_confidence && !(*p.forced_confidence >= 0.0 && *p.forced_confidence <= 1.0))
    throw ConfigError("pretrain.forced_confidence must be in [0, 1]");
  if (scorer.steps < 0 || scorer.batch_size < 1) throw ConfigError("scorer.steps must be >= 0 and batch_size >= 1");
  for (double f : sweep.fractions)
    if (!(f > 0.0 && f <= 1.0)) throw ConfigError("sweep.fractions must lie in (0, 1]");
  if (analyze.summary_plans < 1) throw ConfigError("analyze.summary_plans must be >= 1");
  if (probe.num_labels < 2 || probe.steps < 0 || probe.batch_size < 1) throw ConfigError("probe: invalid sizes");
}

features::SynthConfig RunConfig::synth_config() const {
  auto s = synth;
  s.seed = seed;
  return s;
}

scorer::ScorerConfig RunConfig::scorer_config() const {
  auto s = scorer.model;
  s.seed = seed;
  return s;
}

msm::MsmConfig RunConfig::msm_config() const {
  auto m = msm;
  m.seed = seed;
  return m;
}

msm::StepConfig RunConfig::step_config(std::int64_t step, std::int64_t total_steps) const {
  msm::StepConfig s;
  s.strategy = pretrain.strategy;
  s.mask_fraction = pretrain.mask_fraction;
  s.context = pretrain.context;
  s.scale_mode = pretrain.scale_mode;
  s.frame_participation = pretrain.frame_participation;
  s.n_distractors = pretrain.n_distractors;
  s.kappa = pretrain.kappa;
  s.diversity_weight = pretrain.diversity_weight;
  s.diversity_masked_only = pretrain.diversity_masked_only;
  s.tau = msm::anneal_tau(pretrain.tau_start, pretrain.tau_end, step, total_steps);
  s.seed = seed;
  s.step = step;
  return s;
}

RunConfig resolve_config(const std::string& config_path, const std::vector<std::string>& overrides) {
  json user = json::object();
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) throw IoError("cannot read config file " + config_path);
    try {
      user = json::parse(in);
    } catch (const json::exception& e) {
      throw ConfigError("config " + config_path + ": " + e.what());
    }
  }
  for (const auto& ov : overrides) {
    const auto eq = ov.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + ov + "' must look like key.path=value");
    const std::string key = ov.substr(0, eq), raw = ov.substr(eq + 1);
    json value;
    try {
      value = json::parse(raw);
    } catch (const json::exception&) {
      value = raw;
    }
    json* node = &user;
    std::size_t start = 0;
    while (true) {
      const auto dot = key.find('.', start);
      const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
      if (dot == std::string::npos) {
        (*node)[part] = value;
        break;
      }
      if (!node->contains(part) || !(*node)[part].is_object()) (*node)[part] = json::object();
      node = &(*node)[part];
      start = dot + 1;
    }
  }
  return run_config_from_json(user);
}

}  // namespace atm::train
