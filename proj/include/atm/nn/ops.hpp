// Copyright 2026 The atm-msm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "atm/common/rng.hpp"
#include "atm/nn/tensor.hpp"

// Differentiable primitives. Every op takes the tape it records into; when no
// input requires a gradient nothing is recorded and the op is a plain
// computation. Matrices are rank-2 row-major [rows, cols].
namespace atm::nn::ops {

template <typename T>
using Ten = BasicTensor<T>;

// C = op(A) * op(B).
template <typename T>
Ten<T> matmul(BasicTape<T>& tape, const Ten<T>& a, const Ten<T>& b, bool trans_a = false, bool trans_b = false);

template <typename T>
Ten<T> add(BasicTape<T>& tape, const Ten<T>& a, const Ten<T>& b);
template <typename T>
Ten<T> sub(BasicTape<T>& tape, const Ten<T>& a, const Ten<T>& b);
template <typename T>
Ten<T> mul(BasicTape<T>& tape, const Ten<T>& a, const Ten<T>& b);
// x [N, D] + bias [D] broadcast over rows.
template <typename T>
Ten<T> add_row(BasicTape<T>& tape, const Ten<T>& x, const Ten<T>& bias);
// a * x + b, elementwise with scalar constants.
template <typename T>
Ten<T> affine(BasicTape<T>& tape, const Ten<T>& x, T a, T b = T(0));
// Each row i of x [N, D] multiplied by w[i].
template <typename T>
Ten<T> scale_rows(BasicTape<T>& tape, const Ten<T>& x, const std::vector<T>& w);

template <typename T>
Ten<T> exp(BasicTape<T>& tape, const Ten<T>& x);
template <typename T>
Ten<T> log(BasicTape<T>& tape, const Ten<T>& x);
// Exact (erf) form.
template <typename T>
Ten<T> gelu(BasicTape<T>& tape, const Ten<T>& x);

template <typename T>
Ten<T> softmax_rows(BasicTape<T>& tape, const Ten<T>& x);
template <typename T>
Ten<T> log_softmax_rows(BasicTape<T>& tape, const Ten<T>& x);
template <typename T>
Ten<T> layer_norm(BasicTape<T>& tape, const Ten<T>& x, const Ten<T>& gamma, const Ten<T>& beta,
                  T eps = T(1e-5));
template <typename T>
Ten<T> l2_normalize_rows(BasicTape<T>& tape, const Ten<T>& x, T eps = T(1e-8));

// Reductions to shape [1].
template <typename T>
Ten<T> sum(BasicTape<T>& tape, const Ten<T>& x);
template <typename T>
Ten<T> mean(BasicTape<T>& tape, const Ten<T>& x);
// sum_i w_i x_i over all elements; w.size() == numel.
template <typename T>
Ten<T> weighted_sum(BasicTape<T>& tape, const Ten<T>& x, const std::vector<T>& w);
// Column means of [N, D] -> [1, D].
template <typename T>
Ten<T> mean_rows(BasicTape<T>& tape, const Ten<T>& x);
// Sum of a list of scalars -> [1].
template <typename T>
Ten<T> add_n(BasicTape<T>& tape, const std::vector<Ten<T>>& xs);

template <typename T>
Ten<T> slice_cols(BasicTape<T>& tape, const Ten<T>& x, int start, int len);
template <typename T>
Ten<T> concat_cols(BasicTape<T>& tape, const std::vector<Ten<T>>& xs);
template <typename T>
Ten<T> concat_rows(BasicTape<T>& tape, const std::vector<Ten<T>>& xs);
// Embedding lookup: out[i] = table[ids[i]].
template <typename T>
Ten<T> gather_rows(BasicTape<T>& tape, const Ten<T>& table, const std::vector<int>& ids);
// out[i][k] = x[i][idx[i * K + k]] for an [N, K] index grid.
template <typename T>
Ten<T> gather_per_row(BasicTape<T>& tape, const Ten<T>& x, const std::vector<int>& idx, int k);
// Rows with mask[t] set are replaced by the vector m [D].
template <typename T>
Ten<T> mask_rows(BasicTape<T>& tape, const Ten<T>& x, const std::vector<bool>& mask, const Ten<T>& m);

// Per-row cross entropy of logits [N, K] against integer targets -> [N].
template <typename T>
Ten<T> cross_entropy_rows(BasicTape<T>& tape, const Ten<T>& logits, const std::vector<int>& targets);
// Natural-log entropy of a probability vector (any shape) -> [1]; 0 log 0 = 0.
template <typename T>
Ten<T> entropy(BasicTape<T>& tape, const Ten<T>& p);
// Forward value of `hard`, gradient routed to `soft` unchanged.
template <typename T>
Ten<T> straight_through(BasicTape<T>& tape, const Ten<T>& hard, const Ten<T>& soft);

// x [C, H, W], weight [O, C, KH, KW], bias [O] -> [O, H', W'] with
// H' = (H + 2 pad - KH) / stride + 1.
template <typename T>
Ten<T> conv2d(BasicTape<T>& tape, const Ten<T>& x, const Ten<T>& weight, const Ten<T>& bias, int stride, int pad);
// [C, H, W] -> [H, C * W]; each output row concatenates the channels at one H.
template <typename T>
Ten<T> flatten_channels(BasicTape<T>& tape, const Ten<T>& x);
// x [T, D], weight [D, K], bias [D]; same padding along T (K odd).
template <typename T>
Ten<T> depthwise_conv1d(BasicTape<T>& tape, const Ten<T>& x, const Ten<T>& weight, const Ten<T>& bias);
// Inverted dropout; identity when p == 0.
template <typename T>
Ten<T> dropout(BasicTape<T>& tape, const Ten<T>& x, double p, Rng& rng);

}  // namespace atm::nn::ops
