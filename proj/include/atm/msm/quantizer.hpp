// Copyright 2026 The atm-msm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "atm/common/rng.hpp"
#include "atm/nn/layers.hpp"

namespace atm::msm {

/// Single-group Gumbel-softmax quantizer: projection to L code logits and an
/// L x d_code codebook.
template <typename T>
struct Quantizer {
  nn::Linear<T> proj;
  nn::BasicTensor<T> codebook;  // [L, d_code]

  Quantizer() = default;
  Quantizer(int d_in, int codes, int code_dim, Rng& rng);
  int codes() const { return codebook.dim(0); }
  void collect(nn::BasicParameterSet<T>& ps, const std::string& prefix) const;
};

template <typename T>
struct QuantizerOutput {
  nn::BasicTensor<T> logits;     // [T, L]
  nn::BasicTensor<T> probs;      // softmax(logits), no noise or temperature
  nn::BasicTensor<T> soft;       // softmax((logits + g) / tau)
  nn::BasicTensor<T> selection;  // one-hot forward, soft backward (or soft itself)
  nn::BasicTensor<T> q;          // selection * codebook, [T, d_code]
  std::vector<int> targets;      // argmax of soft per frame
};

/// Quantizes from precomputed logits. `noise` == nullptr disables the Gumbel
/// perturbation. With hard == false the soft distribution is used directly
/// (no straight-through), which keeps the whole path differentiable.
template <typename T>
QuantizerOutput<T> quantize_logits(nn::BasicTape<T>& tape, const nn::BasicTensor<T>& logits,
                                   const nn::BasicTensor<T>& codebook, double tau, Rng* noise, bool hard = true);

template <typename T>
QuantizerOutput<T> quantize(nn::BasicTape<T>& tape, const Quantizer<T>& qz, const nn::BasicTensor<T>& E, double tau,
                            Rng* noise, bool hard = true);

/// Index of the first maximum in each row of a row-major [rows, cols] block.
template <typename T>
std::vector<int> argmax_rows(std::span<const T> values, int rows, int cols);

/// Linear temperature schedule from `start` at step 1 to `end` at `total`.
double anneal_tau(double start, double end, std::int64_t step, std::int64_t total);

}  // namespace atm::msm
