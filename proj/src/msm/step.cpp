// Copyright 2026 The atm-msm Authors
// SPDX-License-Identifier: Apache-2.0

#include "atm/msm/step.hpp"

#include <set>

#include "atm/common/error.hpp"
#include "atm/features/to_tensor.hpp"

namespace atm::msm {

namespace ops = nn::ops;
using nn::BasicTensor;

template <typename T>
MsmForward<T> msm_forward(nn::BasicTape<T>& tape, const MsmNet<T>& net, std::span<const MsmExample* const> batch,
                          const StepConfig& cfg) {
  if (batch.empty()) throw ContractViolation("msm_forward: empty batch");
  const bool bert = net.variant == Variant::W2vBert;
  const int L = net.quantizer.codes();

  struct PerUtt {
    ContrastiveResult<T> ctr;
    CeResult<T> ce;
    std::vector<float> masked_scores;
    double s_u = 1.0;
    bool frame_selected = false;
  };
  std::vector<PerUtt> utts(batch.size());
  std::vector<BasicTensor<T>> div_rows;
  MsmForward<T> out;
  auto& bd = out.breakdown;
  bd.tau = cfg.tau;
  std::set<int> codes;
  int ctr_correct = 0, ce_correct = 0;
  double masked_conf_sum = 0.0;
  int masked_conf_count = 0;

  for (std::size_t u = 0; u < batch.size(); ++u) {
    const auto& ex = *batch[u];
    const auto key = hash_string(ex.id);
    auto E = net.encode(tape, features::to_tensor<T>(ex.feats));
    const int Tn = E.rows();

    std::span<const float> scores;
    if (ex.track) {
      if (static_cast<int>(ex.track->scores.size()) != Tn)
        throw ShapeError("msm_step: utterance " + ex.id + " has " + std::to_string(ex.track->scores.size()) +
                         " confidence scores for " + std::to_string(Tn) + " encoded frames");
      scores = ex.track->scores;
    } else if (cfg.strategy != masking::MaskStrategy::Random || cfg.scale_mode != ScaleMode::None) {
      throw ContractViolation("msm_step: utterance " + ex.id + " has no confidence track");
    }

    auto mask_rng = Rng::keyed(cfg.seed, "msm/mask", key, static_cast<std::uint64_t>(cfg.step));
    masking::SampleDiagnostics diag;
    const auto plan =
        masking::plan_mask(scores, Tn, cfg.mask_fraction, cfg.context, cfg.strategy, mask_rng, &diag);
    bd.sampler_fallbacks += diag.uniform_fallbacks;
    bd.masked_frames += static_cast<int>(plan.J.size());
    bd.total_frames += Tn;
    if (!scores.empty()) {
      for (int t : plan.J) {
        utts[u].masked_scores.push_back(scores[t]);
        masked_conf_sum += scores[t];
        ++masked_conf_count;
      }
      utts[u].s_u = ex.track->utterance_mean;
    }

    auto gumbel_rng = Rng::keyed(cfg.seed, "msm/gumbel", key, static_cast<std::uint64_t>(cfg.step));
    auto qo = quantize(tape, net.quantizer, E, cfg.tau, cfg.gumbel_noise ? &gumbel_rng : nullptr, cfg.hard_quantizer);
    codes.insert(qo.targets.begin(), qo.targets.end());
    div_rows.push_back(cfg.diversity_masked_only ? ops::gather_rows(tape, qo.probs, plan.J) : qo.probs);

    auto masked = apply_mask(tape, E, plan, net.mask_embedding);
    auto C = net.context_forward(tape, masked);
    auto dist_rng = Rng::keyed(cfg.seed, "msm/distractors", key, static_cast<std::uint64_t>(cfg.step));
    utts[u].ctr = contrastive_loss(tape, net.project.forward(tape, C), qo.q, plan.J, cfg.n_distractors, cfg.kappa,
                                   dist_rng);
    if (utts[u].ctr.clamped) ++bd.distractor_clamps;
    ctr_correct += utts[u].ctr.correct;
    if (bert) {
      auto H = net.bert_forward(tape, C);
      utts[u].ce = ce_loss_masked(tape, net.variant, net.ce_head.forward(tape, H), qo.targets, plan.J);
      ce_correct += utts[u].ce.correct;
    }
    if (cfg.scale_mode == ScaleMode::Frame) {
      auto sel_rng = Rng::keyed(cfg.seed, "msm/frame-select", key, static_cast<std::uint64_t>(cfg.step));
      utts[u].frame_selected = sel_rng.uniform() < cfg.frame_participation;
    }
    out.targets.push_back(std::move(qo.targets));
  }

  auto l_div = diversity_loss(tape, div_rows.size() == 1 ? div_rows.front() : ops::concat_rows(tape, div_rows));
  auto div_term = ops::affine(tape, l_div, static_cast<T>(cfg.diversity_weight));

  const T inv_b = T(1) / static_cast<T>(batch.size());
  std::vector<BasicTensor<T>> scaled;
  double ctr_sum = 0.0, ce_sum = 0.0, total_sum = 0.0, scaled_sum = 0.0;
  for (auto& pu : utts) {
    UtteranceTerms<T> terms{pu.ctr.per_frame, bert ? pu.ce.per_frame : BasicTensor<T>(), div_term};
    const auto n = static_cast<double>(pu.ctr.per_frame.numel());
    const bool frame_scaled = cfg.scale_mode == ScaleMode::Frame && pu.frame_selected;
    auto frame_mean = [&](const BasicTensor<T>& x, bool weighted) {
      double acc = 0.0;
      auto v = x.values();
      for (std::size_t i = 0; i < v.size(); ++i)
        acc += static_cast<double>(v[i]) * (weighted ? static_cast<double>(pu.masked_scores.at(i)) : 1.0);
      return acc / n;
    };
    const double c = frame_mean(pu.ctr.per_frame, false);
    const double e = bert ? frame_mean(pu.ce.per_frame, false) : 0.0;
    const double dv = static_cast<double>(div_term.item());
    ctr_sum += c;
    ce_sum += e;
    total_sum += c + e + dv;
    if (frame_scaled)
      scaled_sum += frame_mean(pu.ctr.per_frame, true) + (bert ? frame_mean(pu.ce.per_frame, true) : 0.0) + dv;
    else
      scaled_sum += scale_loss(c + e + dv, pu.s_u, cfg.scale_mode);
    auto s = scaled_objective(tape, terms, cfg.scale_mode, pu.s_u, pu.masked_scores, pu.frame_selected);
    scaled.push_back(ops::affine(tape, s, inv_b));
  }
  out.loss = scaled.size() == 1 ? scaled.front() : ops::add_n(tape, scaled);

  const double b = static_cast<double>(batch.size());
  bd.l_ctr = ctr_sum / b;
  bd.l_ce = ce_sum / b;
  bd.l_div = static_cast<double>(l_div.item());
  bd.l_total = total_sum / b;
  bd.l_scaled = scaled_sum / b;
  bd.unique_codes = static_cast<int>(codes.size());
  bd.codebook_usage_pct = 100.0 * bd.unique_codes / static_cast<double>(L);
  bd.msm_accuracy = static_cast<double>(bert ? ce_correct : ctr_correct) / static_cast<double>(bd.masked_frames);
  bd.realized_coverage = static_cast<double>(bd.masked_frames) / static_cast<double>(bd.total_frames);
  if (masked_conf_count > 0) bd.mean_masked_confidence = masked_conf_sum / masked_conf_count;
  return out;
}

template MsmForward<float> msm_forward(nn::BasicTape<float>&, const MsmNet<float>&, std::span<const MsmExample* const>,
                                       const StepConfig&);
template MsmForward<double> msm_forward(nn::BasicTape<double>&, const MsmNet<double>&,
                                        std::span<const MsmExample* const>, const StepConfig&);

MsmExample crop_example(const MsmExample& ex, int max_frames, Rng& rng) {
  const int len = max_frames / 4 * 4;
  if (len < 4) throw ContractViolation("crop_example: window must cover at least 4 frames");
  if (ex.feats.frames <= len) return ex;
  const int slots = (ex.feats.frames - len) / 4 + 1;
  const int start = 4 * static_cast<int>(rng.below(static_cast<std::uint64_t>(slots)));
  MsmExample out{ex.id, {}, std::nullopt};
  out.feats.frames = len;
  out.feats.bins = ex.feats.bins;
  const auto first = ex.feats.data.begin() + static_cast<std::ptrdiff_t>(start) * ex.feats.bins;
  out.feats.data.assign(first, first + static_cast<std::ptrdiff_t>(len) * ex.feats.bins);
  if (ex.track) {
    const auto b = ex.track->scores.begin() + start / 4;
    out.track = scorer::make_track(std::vector<float>(b, b + len / 4));
  }
  return out;
}

LossBreakdown msm_step(MsmModel& model, std::span<const MsmExample* const> batch, const StepConfig& cfg) {
  model.parameters().zero_grad();
  nn::Tape tape;
  auto fwd = msm_forward(tape, model.net(), batch, cfg);
  tape.backward(fwd.loss);
  return fwd.breakdown;
}

}  // namespace atm::msm
