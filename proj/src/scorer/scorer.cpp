// Copyright 2026 The atm-msm Authors
// SPDX-License-Identifier: Apache-2.0

#include "atm/scorer/scorer.hpp"

#include <algorithm>

#include "atm/common/batching.hpp"
#include "atm/common/error.hpp"
#include "atm/features/to_tensor.hpp"
#include "atm/nn/checkpoint.hpp"
#include "atm/scorer/ctc.hpp"

namespace atm::scorer {

using nlohmann::json;

void ScorerConfig::validate() const {
  if (num_labels < 2) throw ConfigError("scorer: num_labels must be >= 2, got " + std::to_string(num_labels));
  if (feature_dim < 4) throw ConfigError("scorer: feature_dim must be >= 4");
  if (d_model < 1 || heads < 1 || d_model % heads != 0)
    throw ConfigError("scorer: d_model must be a positive multiple of heads");
  if (blocks < 0 || subsample_channels < 1 || ff_mult < 1) throw ConfigError("scorer: invalid layer sizes");
  if (conv_kernel < 1 || conv_kernel % 2 == 0) throw ConfigError("scorer: conv_kernel must be odd");
}

json to_json(const ScorerConfig& c) {
  return {{"num_labels", c.num_labels},
          {"feature_dim", c.feature_dim},
          {"d_model", c.d_model},
          {"heads", c.heads},
          {"blocks", c.blocks},
          {"subsample_channels", c.subsample_channels},
          {"ff_mult", c.ff_mult},
          {"conv_module", c.conv_module},
          {"conv_kernel", c.conv_kernel},
          {"confidence_excludes_blank", c.confidence_excludes_blank},
          {"seed", c.seed}};
}

ScorerConfig scorer_config_from_json(const json& j) {
  ScorerConfig c;
  c.num_labels = j.value("num_labels", c.num_labels);
  c.feature_dim = j.value("feature_dim", c.feature_dim);
  c.d_model = j.value("d_model", c.d_model);
  c.heads = j.value("heads", c.heads);
  c.blocks = j.value("blocks", c.blocks);
  c.subsample_channels = j.value("subsample_channels", c.subsample_channels);
  c.ff_mult = j.value("ff_mult", c.ff_mult);
  c.conv_module = j.value("conv_module", c.conv_module);
  c.conv_kernel = j.value("conv_kernel", c.conv_kernel);
  c.confidence_excludes_blank = j.value("confidence_excludes_blank", c.confidence_excludes_blank);
  c.seed = j.value("seed", c.seed);
  return c;
}

namespace {

nn::BlockConfig block_config(const ScorerConfig& c) {
  nn::BlockConfig b;
  b.d_model = c.d_model;
  b.heads = c.heads;
  b.ff_mult = c.ff_mult;
  b.conv_module = c.conv_module;
  b.conv_kernel = c.conv_kernel;
  return b;
}

}  // namespace

template <typename T>
ScorerNet<T>::ScorerNet(const ScorerConfig& cfg, Rng& rng)
    : frontend(cfg.feature_dim, cfg.subsample_channels, cfg.d_model, rng),
      blocks(cfg.blocks, block_config(cfg), rng),
      head(cfg.d_model, cfg.classes(), rng) {}

template <typename T>
nn::BasicTensor<T> ScorerNet<T>::forward(nn::BasicTape<T>& tape, const nn::BasicTensor<T>& features) const {
  auto h = frontend.forward(tape, features);
  h = nn::ops::add(tape, h, nn::sinusoidal_positions<T>(h.rows(), h.cols()));
  return head.forward(tape, blocks.forward(tape, h));
}

template <typename T>
void ScorerNet<T>::collect(nn::BasicParameterSet<T>& ps) const {
  frontend.collect(ps, "frontend");
  blocks.collect(ps, "blocks");
  head.collect(ps, "head");
}

template struct ScorerNet<float>;
template struct ScorerNet<double>;

ConfidenceTrack make_track(std::vector<float> scores) {
  ConfidenceTrack t;
  double s = 0.0;
  for (float v : scores) s += v;
  t.utterance_mean = scores.empty() ? 0.0 : s / static_cast<double>(scores.size());
  t.scores = std::move(scores);
  return t;
}

ConfidenceTrack confidence_from_posteriors(const PosteriorGrid& grid, bool exclude_blank, int blank) {
  if (exclude_blank && (blank < 0 || blank >= grid.classes))
    throw ContractViolation("confidence: blank index required when excluding blank");
  std::vector<float> scores(static_cast<std::size_t>(grid.frames));
  for (int t = 0; t < grid.frames; ++t) {
    float best = 0.0f;
    for (int c = 0; c < grid.classes; ++c) {
      if (exclude_blank && c == blank) continue;
      best = std::max(best, grid.at(t, c));
    }
    scores[static_cast<std::size_t>(t)] = best;
  }
  return make_track(std::move(scores));
}

Scorer::Scorer(const ScorerConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  auto rng = Rng::keyed(cfg_.seed, "scorer/init");
  net_ = ScorerNet<float>(cfg_, rng);
  net_.collect(params_);
}

PosteriorGrid Scorer::posteriors(const features::FeatureSequence& feats) const {
  nn::Tape tape;
  tape.set_grad_enabled(false);
  auto probs = nn::ops::softmax_rows(tape, net_.forward(tape, features::to_tensor<float>(feats)));
  PosteriorGrid g;
  g.frames = probs.rows();
  g.classes = probs.cols();
  g.probs.assign(probs.values().begin(), probs.values().end());
  return g;
}

ConfidenceTrack Scorer::score(const features::FeatureSequence& feats) const {
  return confidence_from_posteriors(posteriors(feats), cfg_.confidence_excludes_blank, cfg_.blank());
}

std::vector<ScorerLogRecord> train_scorer(Scorer& scorer, nn::OptimizerState& state,
                                          const std::vector<ScorerExample>& corpus, const ScorerTrainOptions& opts) {
  for (const auto& ex : corpus)
    if (ex.labels.empty()) throw DataError("train_scorer: utterance '" + ex.id + "' has no labels");
  if (opts.batch_size < 1) throw ConfigError("train_scorer: batch_size must be >= 1");
  std::vector<ScorerLogRecord> log;
  if (opts.steps <= state.step) return log;
  if (corpus.empty()) throw DataError("train_scorer: empty corpus");

  const EpochSampler sampler(corpus.size(), opts.seed, "scorer/batches");
  auto& params = scorer.parameters();
  const int blank = scorer.config().blank();
  while (state.step < opts.steps) {
    const std::int64_t step = state.step + 1;
    params.zero_grad();
    double total = 0.0;
    const auto batch = sampler.batch(step, opts.batch_size);
    const float inv = 1.0f / static_cast<float>(batch.size());
    for (std::size_t idx : batch) {
      const auto& ex = corpus[idx];
      nn::Tape tape;
      auto logits = scorer.net().forward(tape, features::to_tensor<float>(ex.feats));
      auto loss = ctc_loss(tape, logits, ex.labels, blank);
      total += loss.item();
      tape.backward(nn::ops::affine(tape, loss, inv));
    }
    ScorerLogRecord rec;
    rec.step = step;
    rec.loss = total / static_cast<double>(batch.size());
    rec.grad_norm = nn::gradient_norm(params);
    rec.lr = nn::adam_step(params, state, opts.adam);
    scorer.set_steps_trained(state.step);
    if (opts.on_step) opts.on_step(rec);
    log.push_back(rec);
  }
  return log;
}

void save_scorer(const std::filesystem::path& path, const Scorer& scorer, const nn::OptimizerState* state,
                 const json& extra_meta) {
  nn::Checkpoint ck;
  ck.meta = extra_meta.is_object() ? extra_meta : json::object();
  ck.meta["kind"] = "scorer";
  ck.meta["config"] = to_json(scorer.config());
  ck.meta["steps_trained"] = scorer.steps_trained();
  nn::store_parameters(ck, scorer.parameters());
  if (state) nn::store_optimizer(ck, scorer.parameters(), *state);
  nn::write_checkpoint(path, ck);
}

Scorer load_scorer(const std::filesystem::path& path, nn::OptimizerState* state) {
  const auto ck = nn::read_checkpoint(path);
  if (ck.meta.value("kind", std::string()) != "scorer")
    throw ShapeError("checkpoint " + path.string() + " is not a scorer checkpoint");
  Scorer s(scorer_config_from_json(ck.meta.at("config")));
  nn::load_parameters(ck, s.parameters());
  s.set_steps_trained(ck.meta.value("steps_trained", std::int64_t{0}));
  if (state) {
    *state = nn::make_optimizer_state(s.parameters());
    if (!nn::load_optimizer(ck, s.parameters(), *state)) state->step = s.steps_trained();
  }
  return s;
}

}  // namespace atm::scorer
