// Copyright 2026 The atm-msm Authors
// SPDX-License-Identifier: Apache-2.0

#include "atm/nn/layers.hpp"

#include <cmath>

#include "atm/common/error.hpp"

namespace atm::nn {
namespace {

template <typename T>
BasicTensor<T> uniform_init(Shape shape, double bound, Rng& rng) {
  auto t = BasicTensor<T>::zeros(std::move(shape));
  for (auto& v : t.values()) v = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

}  // namespace

int subsampled_length(int n) { return (n + 3) / 4; }

template <typename T>
Linear<T>::Linear(int in, int out, Rng& rng, bool with_bias)
    : weight(uniform_init<T>({in, out}, 1.0 / std::sqrt(static_cast<double>(in)), rng)) {
  if (with_bias) bias = BasicTensor<T>::zeros({out});
}

template <typename T>
BasicTensor<T> Linear<T>::forward(BasicTape<T>& tape, const BasicTensor<T>& x) const {
  auto y = ops::matmul(tape, x, weight);
  return bias.defined() ? ops::add_row(tape, y, bias) : y;
}

template <typename T>
void Linear<T>::collect(BasicParameterSet<T>& ps, const std::string& prefix) const {
  ps.add(prefix + ".weight", weight);
  if (bias.defined()) ps.add(prefix + ".bias", bias);
}

template <typename T>
LayerNorm<T>::LayerNorm(int d) : gamma(BasicTensor<T>::full({d}, T(1))), beta(BasicTensor<T>::zeros({d})) {}

template <typename T>
BasicTensor<T> LayerNorm<T>::forward(BasicTape<T>& tape, const BasicTensor<T>& x) const {
  return ops::layer_norm(tape, x, gamma, beta);
}

template <typename T>
void LayerNorm<T>::collect(BasicParameterSet<T>& ps, const std::string& prefix) const {
  ps.add(prefix + ".gamma", gamma);
  ps.add(prefix + ".beta", beta);
}

template <typename T>
Conv2d<T>::Conv2d(int in_ch, int out_ch, int kernel, int stride_, int pad_, Rng& rng)
    : weight(uniform_init<T>({out_ch, in_ch, kernel, kernel},
                             1.0 / std::sqrt(static_cast<double>(in_ch * kernel * kernel)), rng)),
      bias(BasicTensor<T>::zeros({out_ch})),
      stride(stride_),
      pad(pad_) {}

template <typename T>
BasicTensor<T> Conv2d<T>::forward(BasicTape<T>& tape, const BasicTensor<T>& x) const {
  return ops::conv2d(tape, x, weight, bias, stride, pad);
}

template <typename T>
void Conv2d<T>::collect(BasicParameterSet<T>& ps, const std::string& prefix) const {
  ps.add(prefix + ".weight", weight);
  ps.add(prefix + ".bias", bias);
}

template <typename T>
MultiHeadSelfAttention<T>::MultiHeadSelfAttention(int d, int heads_, Rng& rng)
    : query(d, d, rng), key(d, d, rng), value(d, d, rng), output(d, d, rng), heads(heads_) {
  if (heads_ <= 0 || d % heads_ != 0)
    throw ConfigError("attention: model dim " + std::to_string(d) + " not divisible by " + std::to_string(heads_) +
                      " heads");
}

template <typename T>
BasicTensor<T> MultiHeadSelfAttention<T>::forward(BasicTape<T>& tape, const BasicTensor<T>& x) const {
  const int d = x.cols();
  const int dh = d / heads;
  const T scale = T(1) / std::sqrt(T(dh));
  auto q = query.forward(tape, x);
  auto k = key.forward(tape, x);
  auto v = value.forward(tape, x);
  std::vector<BasicTensor<T>> per_head;
  per_head.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    auto qh = heads == 1 ? q : ops::slice_cols(tape, q, h * dh, dh);
    auto kh = heads == 1 ? k : ops::slice_cols(tape, k, h * dh, dh);
    auto vh = heads == 1 ? v : ops::slice_cols(tape, v, h * dh, dh);
    auto scores = ops::affine(tape, ops::matmul(tape, qh, kh, false, true), scale);
    auto attn = ops::softmax_rows(tape, scores);
    per_head.push_back(ops::matmul(tape, attn, vh));
  }
  auto merged = heads == 1 ? per_head.front() : ops::concat_cols(tape, per_head);
  return output.forward(tape, merged);
}

template <typename T>
void MultiHeadSelfAttention<T>::collect(BasicParameterSet<T>& ps, const std::string& prefix) const {
  query.collect(ps, prefix + ".q");
  key.collect(ps, prefix + ".k");
  value.collect(ps, prefix + ".v");
  output.collect(ps, prefix + ".o");
}

template <typename T>
FeedForward<T>::FeedForward(int d, int hidden, Rng& rng) : up(d, hidden, rng), down(hidden, d, rng) {}

template <typename T>
BasicTensor<T> FeedForward<T>::forward(BasicTape<T>& tape, const BasicTensor<T>& x) const {
  return down.forward(tape, ops::gelu(tape, up.forward(tape, x)));
}

template <typename T>
void FeedForward<T>::collect(BasicParameterSet<T>& ps, const std::string& prefix) const {
  up.collect(ps, prefix + ".up");
  down.collect(ps, prefix + ".down");
}

template <typename T>
ConvModule<T>::ConvModule(int d, int kernel, Rng& rng)
    : depthwise(uniform_init<T>({d, kernel}, 1.0 / std::sqrt(static_cast<double>(kernel)), rng)),
      depthwise_bias(BasicTensor<T>::zeros({d})),
      pointwise(d, d, rng) {}

template <typename T>
BasicTensor<T> ConvModule<T>::forward(BasicTape<T>& tape, const BasicTensor<T>& x) const {
  auto h = ops::depthwise_conv1d(tape, x, depthwise, depthwise_bias);
  return pointwise.forward(tape, ops::gelu(tape, h));
}

template <typename T>
void ConvModule<T>::collect(BasicParameterSet<T>& ps, const std::string& prefix) const {
  ps.add(prefix + ".depthwise.weight", depthwise);
  ps.add(prefix + ".depthwise.bias", depthwise_bias);
  pointwise.collect(ps, prefix + ".pointwise");
}

template <typename T>
ConformerLiteBlock<T>::ConformerLiteBlock(const BlockConfig& cfg, Rng& rng)
    : norm_attn(cfg.d_model),
      norm_conv(cfg.d_model),
      norm_ff(cfg.d_model),
      norm_out(cfg.d_model),
      attn(cfg.d_model, cfg.heads, rng),
      ff(cfg.d_model, cfg.d_model * cfg.ff_mult, rng),
      use_conv(cfg.conv_module),
      dropout(cfg.dropout) {
  if (use_conv) conv = ConvModule<T>(cfg.d_model, cfg.conv_kernel, rng);
}

template <typename T>
BasicTensor<T> ConformerLiteBlock<T>::forward(BasicTape<T>& tape, const BasicTensor<T>& x, Rng* drop_rng) const {
  auto drop = [&](const BasicTensor<T>& h) {
    return (dropout > 0.0 && drop_rng) ? ops::dropout(tape, h, dropout, *drop_rng) : h;
  };
  auto h = ops::add(tape, x, drop(attn.forward(tape, norm_attn.forward(tape, x))));
  if (use_conv) h = ops::add(tape, h, drop(conv.forward(tape, norm_conv.forward(tape, h))));
  h = ops::add(tape, h, drop(ff.forward(tape, norm_ff.forward(tape, h))));
  return norm_out.forward(tape, h);
}

template <typename T>
void ConformerLiteBlock<T>::collect(BasicParameterSet<T>& ps, const std::string& prefix) const {
  norm_attn.collect(ps, prefix + ".norm_attn");
  attn.collect(ps, prefix + ".attn");
  if (use_conv) {
    norm_conv.collect(ps, prefix + ".norm_conv");
    conv.collect(ps, prefix + ".conv");
  }
  norm_ff.collect(ps, prefix + ".norm_ff");
  ff.collect(ps, prefix + ".ff");
  norm_out.collect(ps, prefix + ".norm_out");
}

template <typename T>
BlockStack<T>::BlockStack(int n, const BlockConfig& cfg, Rng& rng) {
  blocks.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) blocks.emplace_back(cfg, rng);
}

template <typename T>
BasicTensor<T> BlockStack<T>::forward(BasicTape<T>& tape, const BasicTensor<T>& x, Rng* drop_rng) const {
  auto h = x;
  for (const auto& b : blocks) h = b.forward(tape, h, drop_rng);
  return h;
}

template <typename T>
void BlockStack<T>::collect(BasicParameterSet<T>& ps, const std::string& prefix) const {
  for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].collect(ps, prefix + "." + std::to_string(i));
}

template <typename T>
ConvSubsampler<T>::ConvSubsampler(int feature_dim_, int channels, int d_model, Rng& rng)
    : conv1(1, channels, 3, 2, 1, rng),
      conv2(channels, channels, 3, 2, 1, rng),
      proj(channels * subsampled_length(feature_dim_), d_model, rng),
      norm(d_model),
      feature_dim(feature_dim_) {}

template <typename T>
BasicTensor<T> ConvSubsampler<T>::forward(BasicTape<T>& tape, const BasicTensor<T>& features) const {
  if (features.cols() != feature_dim)
    throw ShapeError("subsampler: expected " + std::to_string(feature_dim) + " feature bins, got " +
                     std::to_string(features.cols()));
  if (features.rows() < 4) throw LengthError("subsampler: need at least 4 frames, got " + std::to_string(features.rows()));
  // Features are inputs, never trained.
  if (features.requires_grad()) throw ContractViolation("subsampler: features must not require gradients");
  auto image = BasicTensor<T>::from({1, features.rows(), features.cols()},
                                    std::vector<T>(features.values().begin(), features.values().end()));
  auto h = ops::gelu(tape, conv1.forward(tape, image));
  h = ops::gelu(tape, conv2.forward(tape, h));
  return norm.forward(tape, proj.forward(tape, ops::flatten_channels(tape, h)));
}

template <typename T>
void ConvSubsampler<T>::collect(BasicParameterSet<T>& ps, const std::string& prefix) const {
  conv1.collect(ps, prefix + ".conv1");
  conv2.collect(ps, prefix + ".conv2");
  proj.collect(ps, prefix + ".proj");
  norm.collect(ps, prefix + ".norm");
}

template <typename T>
BasicTensor<T> sinusoidal_positions(int t, int d) {
  auto pe = BasicTensor<T>::zeros({t, d});
  auto v = pe.values();
  for (int pos = 0; pos < t; ++pos)
    for (int i = 0; i < d; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / d);
      const double a = pos * freq;
      v[static_cast<std::size_t>(pos) * d + i] = static_cast<T>(i % 2 == 0 ? std::sin(a) : std::cos(a));
    }
  return pe;
}

template struct Linear<float>;
template struct Linear<double>;
template struct LayerNorm<float>;
template struct LayerNorm<double>;
template struct Conv2d<float>;
template struct Conv2d<double>;
template struct MultiHeadSelfAttention<float>;
template struct MultiHeadSelfAttention<double>;
template struct FeedForward<float>;
template struct FeedForward<double>;
template struct ConvModule<float>;
template struct ConvModule<double>;
template struct ConformerLiteBlock<float>;
template struct ConformerLiteBlock<double>;
template struct BlockStack<float>;
template struct BlockStack<double>;
template struct ConvSubsampler<float>;
template struct ConvSubsampler<double>;
template BasicTensor<float> sinusoidal_positions<float>(int, int);
template BasicTensor<double> sinusoidal_positions<double>(int, int);

}  // namespace atm::nn
