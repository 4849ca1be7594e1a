// Copyright 2026 The atm-msm Authors
// SPDX-License-Identifier: Apache-2.0

#include "atm/msm/losses.hpp"

#include <algorithm>
#include <numeric>

#include "atm/common/error.hpp"
#include "atm/common/log.hpp"
#include "atm/nn/ops.hpp"

namespace atm::msm {

namespace ops = nn::ops;
using nn::BasicTape;
using nn::BasicTensor;

std::string to_string(Variant v) { return v == Variant::W2v2 ? "w2v2" : "w2v-bert"; }

Variant parse_variant(const std::string& s) {
  if (s == "w2v2") return Variant::W2v2;
  if (s == "w2v-bert") return Variant::W2vBert;
  throw ConfigError("unknown variant '" + s + "' (expected w2v2|w2v-bert)");
}

std::string to_string(ScaleMode m) {
  switch (m) {
    case ScaleMode::None: return "none";
    case ScaleMode::Utterance: return "utterance";
    case ScaleMode::Frame: return "frame";
  }
  return "?";
}

ScaleMode parse_scale_mode(const std::string& s) {
  if (s == "none") return ScaleMode::None;
  if (s == "utterance") return ScaleMode::Utterance;
  if (s == "frame") return ScaleMode::Frame;
  throw ConfigError("unknown scale mode '" + s + "' (expected none|utterance|frame)");
}

template <typename T>
ContrastiveResult<T> contrastive_loss(BasicTape<T>& tape, const BasicTensor<T>& C, const BasicTensor<T>& Q,
                                      const std::vector<int>& J, int n_distractors, double kappa, Rng& rng) {
  if (J.empty()) throw ContractViolation("contrastive_loss: no masked positions");
  if (n_distractors < 0) throw ContractViolation("contrastive_loss: negative distractor count");
  if (!(kappa > 0.0)) throw ContractViolation("contrastive_loss: kappa must be positive");
  if (C.rows() != Q.rows() || C.cols() != Q.cols()) throw ShapeError("contrastive_loss: C and Q shapes differ");
  const int n = static_cast<int>(J.size());
  ContrastiveResult<T> r;
  r.distractors = std::min(n_distractors, n - 1);
  if (r.distractors < n_distractors) {
    r.clamped = true;
    log::debug("contrastive_loss: clamped distractors from " + std::to_string(n_distractors) + " to " +
               std::to_string(r.distractors));
  }
  const int k = r.distractors + 1;

  auto cj = ops::l2_normalize_rows(tape, ops::gather_rows(tape, C, J));
  auto qj = ops::l2_normalize_rows(tape, ops::gather_rows(tape, Q, J));
  auto sim = ops::matmul(tape, cj, qj, false, true);  // [n, n] cosine

  // Column 0 is the positive; the rest are other masked positions.
  std::vector<int> idx(static_cast<std::size_t>(n) * k);
  std::vector<int> pool(static_cast<std::size_t>(n > 0 ? n - 1 : 0));
  for (int i = 0; i < n; ++i) {
    idx[static_cast<std::size_t>(i) * k] = i;
    int w = 0;
    for (int m = 0; m < n; ++m)
      if (m != i) pool[w++] = m;
    for (int d = 0; d < r.distractors; ++d) {
      const auto pick = d + static_cast<int>(rng.below(static_cast<std::uint64_t>(n - 1 - d)));
      std::swap(pool[d], pool[pick]);
      idx[static_cast<std::size_t>(i) * k + 1 + d] = pool[d];
    }
  }
  auto logits = ops::affine(tape, ops::gather_per_row(tape, sim, idx, k), static_cast<T>(1.0 / kappa));
  r.per_frame = ops::cross_entropy_rows(tape, logits, std::vector<int>(static_cast<std::size_t>(n), 0));
  auto lv = logits.values();
  for (int i = 0; i < n; ++i) {
    const T* row = lv.data() + static_cast<std::size_t>(i) * k;
    if (std::max_element(row, row + k) == row) ++r.correct;
  }
  return r;
}

template <typename T>
BasicTensor<T> diversity_loss(BasicTape<T>& tape, const BasicTensor<T>& probs) {
  if (probs.rows() < 1) throw ContractViolation("diversity_loss: empty batch");
  const T L = static_cast<T>(probs.cols());
  auto pbar = ops::mean_rows(tape, probs);
  return ops::affine(tape, ops::exp(tape, ops::entropy(tape, pbar)), T(-1) / L, T(1));
}

template <typename T>
CeResult<T> ce_loss_masked(BasicTape<T>& tape, Variant variant, const BasicTensor<T>& logits,
                           const std::vector<int>& targets, const std::vector<int>& J) {
  if (variant != Variant::W2vBert) throw ContractViolation("ce_loss_masked: only defined for the w2v-bert variant");
  if (J.empty()) throw ContractViolation("ce_loss_masked: no masked positions");
  if (static_cast<int>(targets.size()) != logits.rows()) throw ShapeError("ce_loss_masked: target count mismatch");
  std::vector<int> tj;
  tj.reserve(J.size());
  for (int j : J) tj.push_back(targets.at(static_cast<std::size_t>(j)));
  auto lj = ops::gather_rows(tape, logits, J);
  CeResult<T> r;
  r.per_frame = ops::cross_entropy_rows(tape, lj, tj);
  const int L = lj.cols();
  auto lv = lj.values();
  for (std::size_t i = 0; i < tj.size(); ++i) {
    const T* row = lv.data() + i * static_cast<std::size_t>(L);
    if (std::max_element(row, row + L) - row == tj[i]) ++r.correct;
  }
  return r;
}

namespace {

template <typename T>
BasicTensor<T> weighted_mean(BasicTape<T>& tape, const BasicTensor<T>& x, std::span<const float> w) {
  const auto n = static_cast<std::size_t>(x.numel());
  std::vector<T> weights(n, T(1) / static_cast<T>(n));
  if (!w.empty()) {
    if (w.size() != n) throw ShapeError("scaled_objective: frame score count does not match masked frames");
    for (std::size_t i = 0; i < n; ++i) weights[i] *= static_cast<T>(w[i]);
  }
  return ops::weighted_sum(tape, x, weights);
}

template <typename T>
BasicTensor<T> combine(BasicTape<T>& tape, const UtteranceTerms<T>& terms, std::span<const float> w) {
  std::vector<BasicTensor<T>> parts{weighted_mean(tape, terms.ctr, w)};
  if (terms.ce.defined()) parts.push_back(weighted_mean(tape, terms.ce, w));
  if (terms.div_term.defined()) parts.push_back(terms.div_term);
  return parts.size() == 1 ? parts.front() : ops::add_n(tape, parts);
}

}  // namespace

template <typename T>
BasicTensor<T> utterance_objective(BasicTape<T>& tape, const UtteranceTerms<T>& terms) {
  return combine(tape, terms, {});
}

template <typename T>
BasicTensor<T> scaled_objective(BasicTape<T>& tape, const UtteranceTerms<T>& terms, ScaleMode mode, double s_u,
                                std::span<const float> frame_scores, bool frame_selected) {
  switch (mode) {
    case ScaleMode::None: return combine(tape, terms, {});
    case ScaleMode::Utterance: return ops::affine(tape, combine(tape, terms, {}), static_cast<T>(s_u));
    case ScaleMode::Frame:
      if (!frame_selected) return combine(tape, terms, {});
      if (frame_scores.empty()) throw ContractViolation("scaled_objective: frame mode needs frame scores");
      return combine(tape, terms, frame_scores);
  }
  throw ContractViolation("scaled_objective: bad mode");
}

double scale_loss(double l_total, double s_u, ScaleMode mode) {
  return mode == ScaleMode::Utterance ? s_u * l_total : l_total;
}

#define ATM_INSTANTIATE_LOSSES(T)                                                                                  \
  template ContrastiveResult<T> contrastive_loss(BasicTape<T>&, const BasicTensor<T>&, const BasicTensor<T>&,     \
                                                 const std::vector<int>&, int, double, Rng&);                      \
  template BasicTensor<T> diversity_loss(BasicTape<T>&, const BasicTensor<T>&);                                    \
  template CeResult<T> ce_loss_masked(BasicTape<T>&, Variant, const BasicTensor<T>&, const std::vector<int>&,      \
                                      const std::vector<int>&);                                                    \
  template BasicTensor<T> utterance_objective(BasicTape<T>&, const UtteranceTerms<T>&);                            \
  template BasicTensor<T> scaled_objective(BasicTape<T>&, const UtteranceTerms<T>&, ScaleMode, double,             \
                                           std::span<const float>, bool);

ATM_INSTANTIATE_LOSSES(float)
ATM_INSTANTIATE_LOSSES(double)
#undef ATM_INSTANTIATE_LOSSES

}  // namespace atm::msm
