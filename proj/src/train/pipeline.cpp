// Copyright 2026 The atm-msm Authors
// SPDX-License-Identifier: Apache-2.0

#include "atm/train/pipeline.hpp"

#include <chrono>
#include <map>

#include "atm/common/batching.hpp"
#include "atm/common/error.hpp"
#include "atm/common/log.hpp"
#include "atm/common/parallel.hpp"
#include "atm/common/stats.hpp"
#include "atm/features/logmel.hpp"
#include "atm/features/manifest.hpp"
#include "atm/features/to_tensor.hpp"
#include "atm/nn/checkpoint.hpp"
#include "atm/scorer/ctc.hpp"
#include "atm/train/metrics.hpp"

namespace atm::train {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<FeaturizedUtterance> featurize(const std::vector<features::Utterance>& utts) {
  std::vector<FeaturizedUtterance> out(utts.size());
  parallel_for(utts.size(), [&](std::size_t i) {
    const auto& u = utts[i];
    auto& f = out[i];
    f.id = u.id;
    f.domain = u.domain;
    f.labels = u.labels;
    f.feats = features::logmel(u);
    features::normalize_mean_variance(f.feats);
  });
  return out;
}

std::vector<FeaturizedUtterance> featurize_manifest(const fs::path& manifest) {
  if (!fs::exists(manifest)) throw IoError("manifest not found: " + manifest.string());
  const auto entries = features::read_manifest(manifest);
  const auto base = manifest.parent_path();
  std::vector<FeaturizedUtterance> out(entries.size());
  parallel_for(entries.size(), [&](std::size_t i) {
    const auto u = features::load_entry(entries[i], base);
    auto& f = out[i];
    f.id = u.id;
    f.domain = u.domain;
    f.labels = u.labels;
    f.feats = features::logmel(u);
    features::normalize_mean_variance(f.feats);
  });
  return out;
}

std::vector<scorer::CacheRecord> score_corpus(const scorer::Scorer& sc, const std::vector<FeaturizedUtterance>& corpus) {
  std::vector<scorer::CacheRecord> out(corpus.size());
  parallel_for(corpus.size(), [&](std::size_t i) {
    out[i].utt_id = corpus[i].id;
    out[i].track = sc.score(corpus[i].feats);
  });
  return out;
}

scorer::Scorer run_train_scorer(const RunConfig& cfg, const std::vector<FeaturizedUtterance>& corpus,
                                const fs::path& out_dir, bool resume) {
  fs::create_directories(out_dir);
  const auto ckpt = out_dir / "scorer.ckpt";
  const json header = {{"type", "header"}, {"command", "train-scorer"}, {"config", to_json(cfg)}};

  std::vector<scorer::ScorerExample> examples;
  examples.reserve(corpus.size());
  for (const auto& u : corpus) {
    if (u.labels.empty()) throw DataError("train-scorer: utterance '" + u.id + "' has no labels");
    examples.push_back({u.id, u.feats, u.labels});
  }

  nn::OptimizerState state;
  auto sc = [&] {
    if (resume && fs::exists(ckpt)) {
      auto s = scorer::load_scorer(ckpt, &state);
      log::info("train-scorer: resuming from step " + std::to_string(state.step));
      return s;
    }
    scorer::Scorer s(cfg.scorer_config());
    state = nn::make_optimizer_state(s.parameters());
    return s;
  }();

  auto writer = resume ? JsonlWriter::resume(out_dir / "scorer_log.jsonl", state.step, header)
                       : JsonlWriter::create(out_dir / "scorer_log.jsonl", header);
  scorer::ScorerTrainOptions opts;
  opts.steps = cfg.scorer.steps;
  opts.batch_size = cfg.scorer.batch_size;
  opts.adam = cfg.scorer.adam;
  opts.seed = cfg.seed;
  const json meta = {{"run_config", to_json(cfg)}};
  opts.on_step = [&](const scorer::ScorerLogRecord& r) {
    writer.write({{"step", r.step}, {"loss", r.loss}, {"lr", r.lr}, {"grad_norm", r.grad_norm}});
    if (cfg.scorer.checkpoint_every > 0 && r.step % cfg.scorer.checkpoint_every == 0)
      scorer::save_scorer(ckpt, sc, &state, meta);
  };
  scorer::train_scorer(sc, state, examples, opts);
  scorer::save_scorer(ckpt, sc, &state, meta);
  return sc;
}

scorer::ConfidenceIndex pretrain_tracks(const RunConfig& cfg, const std::vector<FeaturizedUtterance>& corpus) {
  scorer::ConfidenceIndex idx;
  if (cfg.pretrain.forced_confidence) {
    const auto v = static_cast<float>(*cfg.pretrain.forced_confidence);
    for (const auto& u : corpus)
      idx.emplace(u.id, scorer::make_track(std::vector<float>(
                             static_cast<std::size_t>(nn::subsampled_length(u.feats.frames)), v)));
    return idx;
  }
  if (!cfg.confidence_cache.empty()) {
    if (!fs::exists(cfg.confidence_cache)) throw IoError("confidence cache not found: " + cfg.confidence_cache);
    return scorer::index_by_id(scorer::read_confidence_cache(cfg.confidence_cache));
  }
  if (!cfg.scorer.checkpoint.empty()) {
    if (!fs::exists(cfg.scorer.checkpoint)) throw IoError("scorer checkpoint not found: " + cfg.scorer.checkpoint);
    auto sc = scorer::load_scorer(cfg.scorer.checkpoint);
    sc.set_confidence_excludes_blank(cfg.scorer.model.confidence_excludes_blank);
    if (sc.steps_trained() == 0) log::warn("pretrain: scoring with an untrained scorer checkpoint");
    return scorer::index_by_id(score_corpus(sc, corpus));
  }
  if (cfg.pretrain.strategy != masking::MaskStrategy::Random || cfg.pretrain.scale_mode != msm::ScaleMode::None)
    throw ConfigError("pretrain: strategy '" + masking::to_string(cfg.pretrain.strategy) + "' with scale mode '" +
                      msm::to_string(cfg.pretrain.scale_mode) +
                      "' needs confidence_cache, scorer.checkpoint or pretrain.forced_confidence");
  return idx;
}

void save_msm(const fs::path& path, const msm::MsmModel& model, const nn::OptimizerState* state,
              const json& run_config) {
  nn::Checkpoint ck;
  ck.meta = {{"kind", "msm"},
             {"msm_config", msm::to_json(model.config())},
             {"run_config", run_config},
             {"step", state ? state->step : 0}};
  nn::store_parameters(ck, model.parameters());
  if (state) nn::store_optimizer(ck, model.parameters(), *state);
  nn::write_checkpoint(path, ck);
}

msm::MsmModel load_msm(const fs::path& path, nn::OptimizerState* state) {
  const auto ck = nn::read_checkpoint(path);
  if (ck.meta.value("kind", std::string()) != "msm") throw ShapeError(path.string() + " is not an MSM checkpoint");
  msm::MsmModel model(msm::msm_config_from_json(ck.meta.at("msm_config")));
  nn::load_parameters(ck, model.parameters());
  if (state) {
    *state = nn::make_optimizer_state(model.parameters());
    if (!nn::load_optimizer(ck, model.parameters(), *state)) state->step = ck.meta.value("step", std::int64_t{0});
  }
  return model;
}

PretrainResult run_pretrain(const RunConfig& cfg, const std::vector<FeaturizedUtterance>& corpus,
                            const scorer::ConfidenceIndex& tracks, const fs::path& out_dir, bool resume) {
  if (corpus.empty()) throw DataError("pretrain: empty corpus");
  fs::create_directories(out_dir);
  const auto ckpt = out_dir / "msm.ckpt";
  const json run_json = to_json(cfg);
  const json header = {{"type", "header"}, {"command", "pretrain"}, {"config", run_json}};

  std::vector<msm::MsmExample> examples;
  examples.reserve(corpus.size());
  for (const auto& u : corpus) {
    msm::MsmExample ex{u.id, u.feats, std::nullopt};
    if (auto it = tracks.find(u.id); it != tracks.end()) {
      ex.track = it->second;
    } else if (!tracks.empty()) {
      throw DataError("pretrain: no confidence track for utterance '" + u.id + "'");
    }
    examples.push_back(std::move(ex));
  }

  nn::OptimizerState state;
  auto model = [&] {
    if (resume && fs::exists(ckpt)) {
      auto m = load_msm(ckpt, &state);
      if (m.config().variant != cfg.msm.variant) throw ShapeError("pretrain: checkpoint variant differs from config");
      log::info("pretrain: resuming from step " + std::to_string(state.step));
      return m;
    }
    msm::MsmModel m(cfg.msm_config());
    state = nn::make_optimizer_state(m.parameters());
    return m;
  }();

  auto metrics = resume ? JsonlWriter::resume(out_dir / "metrics.jsonl", state.step, header)
                        : JsonlWriter::create(out_dir / "metrics.jsonl", header);
  auto timing = resume ? JsonlWriter::resume(out_dir / "timing.jsonl", state.step, json())
                       : JsonlWriter::create(out_dir / "timing.jsonl", json());

  const EpochSampler sampler(examples.size(), cfg.seed, "msm/batches");
  PretrainResult result;
  result.checkpoint = ckpt;
  const auto total = cfg.pretrain.steps;
  while (state.step < total) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::int64_t step = state.step + 1;
    std::vector<const msm::MsmExample*> batch;
    std::vector<msm::MsmExample> cropped;
    const auto picks = sampler.batch(step, cfg.pretrain.batch_size);
    if (cfg.pretrain.max_crop_frames > 0) {
      cropped.reserve(picks.size());
      for (auto i : picks) {
        auto rng = Rng::keyed(cfg.seed, "pretrain/crop", hash_string(examples[i].id), static_cast<std::uint64_t>(step));
        cropped.push_back(msm::crop_example(examples[i], cfg.pretrain.max_crop_frames, rng));
      }
      for (const auto& ex : cropped) batch.push_back(&ex);
    } else {
      for (auto i : picks) batch.push_back(&examples[i]);
    }
    msm::LossBreakdown bd;
    try {
      bd = msm::msm_step(model, batch, cfg.step_config(step, total));
    } catch (const Error&) {
      log::error("pretrain: aborted at step " + std::to_string(step));
      throw;
    }
    const double gnorm = nn::gradient_norm(model.parameters());
    const double lr = nn::adam_step(model.parameters(), state, cfg.pretrain.adam);
    const double wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    auto rec = metrics_record(step, bd, lr, gnorm, cfg.pretrain.metrics_wall_clock ? std::optional(wall_ms)
                                                                                   : std::nullopt);
    metrics.write(rec);
    timing.write({{"step", step}, {"wall_ms", wall_ms}});
    result.records.push_back(std::move(rec));
    if (cfg.pretrain.checkpoint_every > 0 && step % cfg.pretrain.checkpoint_every == 0)
      save_msm(ckpt, model, &state, run_json);
  }
  save_msm(ckpt, model, &state, run_json);
  return result;
}

json analyze_masks(const RunConfig& cfg, const scorer::ConfidenceIndex& tracks, std::vector<json>& rows) {
  if (tracks.empty()) throw DataError("analyze-mask: no confidence tracks");
  const double p = cfg.pretrain.mask_fraction;
  const int c = cfg.pretrain.context;
  std::vector<const std::pair<const std::string, scorer::ConfidenceTrack>*> utts;
  for (const auto& kv : tracks) utts.push_back(&kv);

  for (const auto* kv : utts) {
    const auto key = hash_string(kv->first);
    const auto& s = kv->second.scores;
    for (auto strat : cfg.analyze.strategies) {
      auto rng = Rng::keyed(cfg.seed, "analyze/" + masking::to_string(strat), key);
      const auto plan = masking::plan_mask(s, static_cast<int>(s.size()), p, c, strat, rng);
      const auto st = masking::mask_stats(plan, s);
      rows.push_back({{"utt_id", kv->first},
                      {"strategy", masking::to_string(strat)},
                      {"starts", plan.starts},
                      {"realized_coverage", st.realized_coverage},
                      {"mean_masked_confidence",
                       st.mean_masked_confidence ? json(*st.mean_masked_confidence) : json(nullptr)}});
    }
  }

  // Summary: plans drawn round-robin over utterances, independent streams per
  // strategy and plan index.
  std::map<masking::MaskStrategy, std::vector<double>> samples;
  std::map<masking::MaskStrategy, std::vector<double>> coverage;
  for (auto strat : cfg.analyze.strategies) {
    auto& v = samples[strat];
    for (int k = 0; k < cfg.analyze.summary_plans; ++k) {
      const auto* kv = utts[static_cast<std::size_t>(k) % utts.size()];
      const auto& s = kv->second.scores;
      auto rng = Rng::keyed(cfg.seed, "analyze-summary/" + masking::to_string(strat), static_cast<std::uint64_t>(k));
      const auto plan = masking::plan_mask(s, static_cast<int>(s.size()), p, c, strat, rng);
      const auto st = masking::mask_stats(plan, s);
      if (st.mean_masked_confidence) v.push_back(*st.mean_masked_confidence);
      coverage[strat].push_back(st.realized_coverage);
    }
  }
  json summary = {{"plans_per_strategy", cfg.analyze.summary_plans},
                  {"mask_fraction", p},
                  {"context", c},
                  {"strategies", json::object()},
                  {"tests", json::array()}};
  for (const auto& [strat, v] : samples) {
    summary["strategies"][masking::to_string(strat)] = {{"mean_masked_confidence", stats::mean(v)},
                                                        {"variance", stats::variance(v)},
                                                        {"realized_coverage", stats::mean(coverage[strat])},
                                                        {"n", v.size()}};
  }
  using S = masking::MaskStrategy;
  const std::pair<S, S> pairs[] = {{S::High, S::Random}, {S::Random, S::Low}, {S::High, S::Low}};
  for (const auto& [a, b] : pairs) {
    if (!samples.count(a) || !samples.count(b)) continue;
    const auto r = stats::welch_greater(samples[a], samples[b]);
    summary["tests"].push_back({{"hypothesis", masking::to_string(a) + " > " + masking::to_string(b)},
                                {"welch_t", r.statistic},
                                {"p_value", r.p_value}});
  }
  return summary;
}

namespace {

// Frozen context-network outputs C for an utterance, no masking.
std::vector<float> context_features(const msm::MsmModel& model, const features::FeatureSequence& f, int& frames) {
  nn::Tape tape;
  tape.set_grad_enabled(false);
  const auto& net = model.net();
  auto E = net.encode(tape, features::to_tensor<float>(f));
  auto C = net.context_forward(tape, E);
  frames = C.rows();
  return {C.values().begin(), C.values().end()};
}

}  // namespace

json run_probe(const RunConfig& cfg, const msm::MsmModel& model, const std::vector<FeaturizedUtterance>& train_corpus,
               const std::vector<FeaturizedUtterance>& eval_corpus, const fs::path& out_dir) {
  if (train_corpus.empty()) throw DataError("probe: empty training corpus");
  fs::create_directories(out_dir);
  const int d = model.config().d_model;
  const int V = cfg.probe.num_labels;
  struct Frozen {
    std::string domain;
    std::vector<int> labels;
    nn::Tensor C;
  };
  auto freeze = [&](const std::vector<FeaturizedUtterance>& corpus) {
    std::vector<Frozen> out(corpus.size());
    parallel_for(corpus.size(), [&](std::size_t i) {
      int frames = 0;
      auto values = context_features(model, corpus[i].feats, frames);
      for (int l : corpus[i].labels)
        if (l < 0 || l >= V) throw DataError("probe: label " + std::to_string(l) + " outside probe.num_labels");
      out[i] = {corpus[i].domain, corpus[i].labels, nn::Tensor::from({frames, d}, std::move(values))};
    });
    return out;
  };
  const auto train = freeze(train_corpus);
  const auto eval = freeze(eval_corpus);
  for (const auto& u : train)
    if (u.labels.empty()) throw DataError("probe: training utterance without labels");

  auto rng = Rng::keyed(cfg.seed, "probe/init");
  nn::Linear<float> head(d, V + 1, rng);
  nn::ParameterSet params;
  head.collect(params, "probe");
  auto state = nn::make_optimizer_state(params);
  const EpochSampler sampler(train.size(), cfg.seed, "probe/batches");
  auto log = JsonlWriter::create(out_dir / "probe_log.jsonl",
                                 {{"type", "header"}, {"command", "probe"}, {"config", to_json(cfg)}});
  while (state.step < cfg.probe.steps) {
    const std::int64_t step = state.step + 1;
    params.zero_grad();
    const auto batch = sampler.batch(step, cfg.probe.batch_size);
    const float inv = 1.0f / static_cast<float>(batch.size());
    double total = 0.0;
    for (auto i : batch) {
      nn::Tape tape;
      auto loss = scorer::ctc_loss(tape, head.forward(tape, train[i].C), train[i].labels, V);
      total += loss.item();
      tape.backward(nn::ops::affine(tape, loss, inv));
    }
    const double lr = nn::adam_step(params, state, cfg.probe.adam);
    log.write({{"step", step}, {"loss", total / static_cast<double>(batch.size())}, {"lr", lr}});
  }

  std::map<std::string, std::pair<long, long>> errors;  // domain -> (edits, reference tokens)
  std::map<std::string, int> counts;
  for (const auto& u : eval) {
    nn::Tape tape;
    tape.set_grad_enabled(false);
    auto logits = head.forward(tape, u.C);
    const auto hyp = scorer::greedy_decode(logits.values(), logits.rows(), logits.cols(), V);
    auto& e = errors[u.domain];
    e.first += scorer::edit_distance(hyp, u.labels);
    e.second += static_cast<long>(u.labels.size());
    ++counts[u.domain];
  }
  json report = {{"steps", cfg.probe.steps}, {"domains", json::object()}};
  for (const auto& [dom, e] : errors)
    report["domains"][dom] = {{"ter", e.second > 0 ? static_cast<double>(e.first) / e.second : 0.0},
                              {"edits", e.first},
                              {"tokens", e.second},
                              {"utterances", counts[dom]}};
  return report;
}

}  // namespace atm::train
