// Copyright 2026 The atm-msm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <string>
#include <vector>

#include "atm/common/rng.hpp"
#include "atm/nn/tensor.hpp"

namespace atm::msm {

enum class Variant { W2v2, W2vBert };
std::string to_string(Variant v);
/// "w2v2" or "w2v-bert"; throws ConfigError otherwise.
Variant parse_variant(const std::string& s);

enum class ScaleMode { None, Utterance, Frame };
std::string to_string(ScaleMode m);
ScaleMode parse_scale_mode(const std::string& s);

template <typename T>
struct ContrastiveResult {
  nn::BasicTensor<T> per_frame;  // [|J|]
  int correct = 0;               // true candidate ranked first
  int distractors = 0;           // per frame, after clamping
  bool clamped = false;
};

/// Cosine InfoNCE at the masked positions J: candidate set for c_j is q_j plus
/// `n_distractors` q's drawn without replacement from the other masked
/// positions. Clamped to |J| - 1 distractors when J is too small.
template <typename T>
ContrastiveResult<T> contrastive_loss(nn::BasicTape<T>& tape, const nn::BasicTensor<T>& C, const nn::BasicTensor<T>& Q,
                                      const std::vector<int>& J, int n_distractors, double kappa, Rng& rng);

/// (L - exp(H(p_bar))) / L where p_bar is the mean row of probs [N, L].
template <typename T>
nn::BasicTensor<T> diversity_loss(nn::BasicTape<T>& tape, const nn::BasicTensor<T>& probs);

template <typename T>
struct CeResult {
  nn::BasicTensor<T> per_frame;  // [|J|]
  int correct = 0;
};

/// Cross-entropy of logits [T, L] against targets [T] at positions J. Only
/// defined for the w2v-BERT variant.
template <typename T>
CeResult<T> ce_loss_masked(nn::BasicTape<T>& tape, Variant variant, const nn::BasicTensor<T>& logits,
                           const std::vector<int>& targets, const std::vector<int>& J);

/// Per-utterance objective pieces, each per-frame vector over the same J.
template <typename T>
struct UtteranceTerms {
  nn::BasicTensor<T> ctr;       // [|J|]
  nn::BasicTensor<T> ce;        // [|J|] or undefined
  nn::BasicTensor<T> div_term;  // weighted diversity, scalar (never frame-scaled)
};

/// Unscaled per-utterance objective: mean(ctr) + mean(ce) + div_term.
template <typename T>
nn::BasicTensor<T> utterance_objective(nn::BasicTape<T>& tape, const UtteranceTerms<T>& terms);

/// Scaled per-utterance objective. Utterance mode multiplies the whole
/// objective by s_u; frame mode (when `frame_selected`) weights each masked
/// frame's ctr/ce terms by its s_t before the mean.
template <typename T>
nn::BasicTensor<T> scaled_objective(nn::BasicTape<T>& tape, const UtteranceTerms<T>& terms, ScaleMode mode,
                                    double s_u, std::span<const float> frame_scores, bool frame_selected);

/// Scalar form of utterance scaling: s_u * l_total, or l_total for none.
double scale_loss(double l_total, double s_u, ScaleMode mode);

}  // namespace atm::msm
