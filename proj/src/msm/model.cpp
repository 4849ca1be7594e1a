// Copyright 2026 The atm-msm Authors
// SPDX-License-Identifier: Apache-2.0

#include "atm/msm/model.hpp"

#include "atm/common/error.hpp"

namespace atm::msm {

namespace ops = nn::ops;
using nlohmann::json;

void MsmConfig::validate() const {
  if (feature_dim < 4) throw ConfigError("msm: feature_dim must be >= 4");
  if (d_model < 1 || heads < 1 || d_model % heads != 0)
    throw ConfigError("msm: d_model must be a positive multiple of heads");
  if (context_blocks < 1) throw ConfigError("msm: context network needs at least one block");
  if (variant == Variant::W2vBert && bert_blocks < 1) throw ConfigError("msm: w2v-bert needs at least one Lambda block");
  if (codebook_size < 2) throw ConfigError("msm: codebook_size must be >= 2");
  if (code_dim < 1 || subsample_channels < 1 || ff_mult < 1) throw ConfigError("msm: invalid layer sizes");
  if (conv_kernel < 1 || conv_kernel % 2 == 0) throw ConfigError("msm: conv_kernel must be odd");
}

json to_json(const MsmConfig& c) {
  return {{"variant", to_string(c.variant)},
          {"feature_dim", c.feature_dim},
          {"d_model", c.d_model},
          {"heads", c.heads},
          {"context_blocks", c.context_blocks},
          {"bert_blocks", c.bert_blocks},
          {"subsample_channels", c.subsample_channels},
          {"ff_mult", c.ff_mult},
          {"conv_module", c.conv_module},
          {"conv_kernel", c.conv_kernel},
          {"codebook_size", c.codebook_size},
          {"code_dim", c.code_dim},
          {"seed", c.seed}};
}

MsmConfig msm_config_from_json(const json& j) {
  MsmConfig c;
  if (j.contains("variant")) c.variant = parse_variant(j.at("variant").get<std::string>());
  c.feature_dim = j.value("feature_dim", c.feature_dim);
  c.d_model = j.value("d_model", c.d_model);
  c.heads = j.value("heads", c.heads);
  c.context_blocks = j.value("context_blocks", c.context_blocks);
  c.bert_blocks = j.value("bert_blocks", c.bert_blocks);
  c.subsample_channels = j.value("subsample_channels", c.subsample_channels);
  c.ff_mult = j.value("ff_mult", c.ff_mult);
  c.conv_module = j.value("conv_module", c.conv_module);
  c.conv_kernel = j.value("conv_kernel", c.conv_kernel);
  c.codebook_size = j.value("codebook_size", c.codebook_size);
  c.code_dim = j.value("code_dim", c.code_dim);
  c.seed = j.value("seed", c.seed);
  return c;
}

namespace {

nn::BlockConfig block_config(const MsmConfig& c) {
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
MsmNet<T>::MsmNet(const MsmConfig& cfg, Rng& rng)
    : variant(cfg.variant),
      encoder(cfg.feature_dim, cfg.subsample_channels, cfg.d_model, rng),
      quantizer(cfg.d_model, cfg.codebook_size, cfg.code_dim, rng),
      context(cfg.context_blocks, block_config(cfg), rng),
      project(cfg.d_model, cfg.code_dim, rng) {
  mask_embedding = nn::BasicTensor<T>::zeros({cfg.d_model});
  for (auto& v : mask_embedding.values()) v = static_cast<T>(rng.uniform(-1.0, 1.0));
  if (variant == Variant::W2vBert) {
    bert = nn::BlockStack<T>(cfg.bert_blocks, block_config(cfg), rng);
    ce_head = nn::Linear<T>(cfg.d_model, cfg.codebook_size, rng);
  }
}

template <typename T>
nn::BasicTensor<T> MsmNet<T>::encode(nn::BasicTape<T>& tape, const nn::BasicTensor<T>& features) const {
  return encoder.forward(tape, features);
}

template <typename T>
nn::BasicTensor<T> MsmNet<T>::context_forward(nn::BasicTape<T>& tape, const nn::BasicTensor<T>& masked) const {
  auto h = ops::add(tape, masked, nn::sinusoidal_positions<T>(masked.rows(), masked.cols()));
  return context.forward(tape, h);
}

template <typename T>
nn::BasicTensor<T> MsmNet<T>::bert_forward(nn::BasicTape<T>& tape, const nn::BasicTensor<T>& C) const {
  if (variant != Variant::W2vBert) throw ContractViolation("bert_forward: model has no Lambda network");
  return bert.forward(tape, C);
}

template <typename T>
void MsmNet<T>::collect(nn::BasicParameterSet<T>& ps) const {
  encoder.collect(ps, "encoder");
  ps.add("mask_embedding", mask_embedding);
  quantizer.collect(ps, "quantizer");
  context.collect(ps, "context");
  project.collect(ps, "project");
  if (variant == Variant::W2vBert) {
    bert.collect(ps, "bert");
    ce_head.collect(ps, "ce_head");
  }
}

template <typename T>
nn::BasicTensor<T> apply_mask(nn::BasicTape<T>& tape, const nn::BasicTensor<T>& E, const masking::MaskPlan& plan,
                              const nn::BasicTensor<T>& m) {
  if (plan.T != E.rows() || static_cast<int>(plan.mask.size()) != E.rows())
    throw ContractViolation("apply_mask: plan covers " + std::to_string(plan.T) + " frames, sequence has " +
                            std::to_string(E.rows()));
  return ops::mask_rows(tape, E, plan.mask, m);
}

template struct MsmNet<float>;
template struct MsmNet<double>;
template nn::BasicTensor<float> apply_mask(nn::BasicTape<float>&, const nn::BasicTensor<float>&,
                                           const masking::MaskPlan&, const nn::BasicTensor<float>&);
template nn::BasicTensor<double> apply_mask(nn::BasicTape<double>&, const nn::BasicTensor<double>&,
                                            const masking::MaskPlan&, const nn::BasicTensor<double>&);

MsmModel::MsmModel(const MsmConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  auto rng = Rng::keyed(cfg_.seed, "msm/init");
  net_ = MsmNet<float>(cfg_, rng);
  net_.collect(params_);
}

}  // namespace atm::msm
