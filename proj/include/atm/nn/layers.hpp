// Copyright 2026 The atm-msm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "atm/common/rng.hpp"
#include "atm/nn/ops.hpp"
#include "atm/nn/tensor.hpp"

namespace atm::nn {

/// y = x W + b with W stored [in, out].
template <typename T>
struct Linear {
  BasicTensor<T> weight;
  BasicTensor<T> bias;

  Linear() = default;
  Linear(int in, int out, Rng& rng, bool with_bias = true);
  BasicTensor<T> forward(BasicTape<T>& tape, const BasicTensor<T>& x) const;
  void collect(BasicParameterSet<T>& ps, const std::string& prefix) const;
  int in_features() const { return weight.dim(0); }
  int out_features() const { return weight.dim(1); }
};

template <typename T>
struct LayerNorm {
  BasicTensor<T> gamma;
  BasicTensor<T> beta;

  LayerNorm() = default;
  explicit LayerNorm(int d);
  BasicTensor<T> forward(BasicTape<T>& tape, const BasicTensor<T>& x) const;
  void collect(BasicParameterSet<T>& ps, const std::string& prefix) const;
};

template <typename T>
struct Conv2d {
  BasicTensor<T> weight;  // [out, in, k, k]
  BasicTensor<T> bias;
  int stride = 1;
  int pad = 0;

  Conv2d() = default;
  Conv2d(int in_ch, int out_ch, int kernel, int stride, int pad, Rng& rng);
  BasicTensor<T> forward(BasicTape<T>& tape, const BasicTensor<T>& x) const;
  void collect(BasicParameterSet<T>& ps, const std::string& prefix) const;
};

template <typename T>
struct MultiHeadSelfAttention {
  Linear<T> query, key, value, output;
  int heads = 1;

  MultiHeadSelfAttention() = default;
  MultiHeadSelfAttention(int d, int heads, Rng& rng);
  BasicTensor<T> forward(BasicTape<T>& tape, const BasicTensor<T>& x) const;
  void collect(BasicParameterSet<T>& ps, const std::string& prefix) const;
};

template <typename T>
struct FeedForward {
  Linear<T> up, down;

  FeedForward() = default;
  FeedForward(int d, int hidden, Rng& rng);
  BasicTensor<T> forward(BasicTape<T>& tape, const BasicTensor<T>& x) const;
  void collect(BasicParameterSet<T>& ps, const std::string& prefix) const;
};

/// Depthwise temporal convolution followed by gelu and a pointwise projection.
template <typename T>
struct ConvModule {
  BasicTensor<T> depthwise;  // [d, k]
  BasicTensor<T> depthwise_bias;
  Linear<T> pointwise;

  ConvModule() = default;
  ConvModule(int d, int kernel, Rng& rng);
  BasicTensor<T> forward(BasicTape<T>& tape, const BasicTensor<T>& x) const;
  void collect(BasicParameterSet<T>& ps, const std::string& prefix) const;
};

struct BlockConfig {
  int d_model = 128;
  int heads = 4;
  int ff_mult = 4;
  bool conv_module = true;
  int conv_kernel = 5;
  double dropout = 0.0;
};

/// Pre-norm transformer block with an optional depthwise-conv sub-block
/// between attention and feed-forward ("conformer-lite").
template <typename T>
struct ConformerLiteBlock {
  LayerNorm<T> norm_attn, norm_conv, norm_ff, norm_out;
  MultiHeadSelfAttention<T> attn;
  ConvModule<T> conv;
  FeedForward<T> ff;
  bool use_conv = true;
  double dropout = 0.0;

  ConformerLiteBlock() = default;
  ConformerLiteBlock(const BlockConfig& cfg, Rng& rng);
  BasicTensor<T> forward(BasicTape<T>& tape, const BasicTensor<T>& x, Rng* drop_rng = nullptr) const;
  void collect(BasicParameterSet<T>& ps, const std::string& prefix) const;
};

template <typename T>
struct BlockStack {
  std::vector<ConformerLiteBlock<T>> blocks;

  BlockStack() = default;
  BlockStack(int n, const BlockConfig& cfg, Rng& rng);
  BasicTensor<T> forward(BasicTape<T>& tape, const BasicTensor<T>& x, Rng* drop_rng = nullptr) const;
  void collect(BasicParameterSet<T>& ps, const std::string& prefix) const;
};

/// Two 3x3 stride-2 convolutions over a [T', F] feature map followed by a
/// linear projection: [T', F] -> [ceil(T'/4), d].
template <typename T>
struct ConvSubsampler {
  Conv2d<T> conv1, conv2;
  Linear<T> proj;
  LayerNorm<T> norm;
  int feature_dim = 80;

  ConvSubsampler() = default;
  ConvSubsampler(int feature_dim, int channels, int d_model, Rng& rng);
  BasicTensor<T> forward(BasicTape<T>& tape, const BasicTensor<T>& features) const;
  void collect(BasicParameterSet<T>& ps, const std::string& prefix) const;
};

/// ceil(n / 4): frames produced by ConvSubsampler for n input frames.
int subsampled_length(int n);

/// Sinusoidal absolute position table [t, d].
template <typename T>
BasicTensor<T> sinusoidal_positions(int t, int d);

}  // namespace atm::nn
