// Copyright 2026 The atm-msm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <vector>

#include "atm/nn/tensor.hpp"

namespace atm::scorer {

/// Frames needed to emit `target`: one per label plus a blank between each
/// pair of equal neighbours.
int ctc_min_frames(std::span<const int> target);

struct CtcResult {
  double loss = 0.0;                 // -log P(target | x)
  std::vector<double> logit_grad;    // d loss / d logits, row-major [T, C]
};

/// Forward-backward over the blank-expanded target in log space. `logits`
/// are unnormalized scores [frames, classes]; a log-softmax is applied per
/// frame. Throws InfeasibleAlignment when frames < ctc_min_frames(target).
CtcResult ctc_forward_backward(std::span<const double> logits, int frames, int classes, std::span<const int> target,
                               int blank);

/// Differentiable CTC loss on the tape; returns a scalar.
template <typename T>
nn::BasicTensor<T> ctc_loss(nn::BasicTape<T>& tape, const nn::BasicTensor<T>& logits, const std::vector<int>& target,
                            int blank);

/// Best-path decode: argmax per frame, merge repeats, drop blanks.
std::vector<int> greedy_decode(std::span<const float> scores, int frames, int classes, int blank);

/// Levenshtein distance between label sequences.
int edit_distance(std::span<const int> a, std::span<const int> b);

}  // namespace atm::scorer
