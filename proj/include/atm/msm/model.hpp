// Copyright 2026 The atm-msm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <json.hpp>

#include "atm/masking/mask.hpp"
#include "atm/msm/losses.hpp"
#include "atm/msm/quantizer.hpp"
#include "atm/nn/layers.hpp"

namespace atm::msm {

struct MsmConfig {
  Variant variant = Variant::W2v2;
  int feature_dim = 80;
  int d_model = 128;
  int heads = 4;
  int context_blocks = 2;  // Omega
  int bert_blocks = 2;     // Lambda, w2v-bert only
  int subsample_channels = 16;
  int ff_mult = 4;
  bool conv_module = true;
  int conv_kernel = 5;
  int codebook_size = 64;  // L
  int code_dim = 64;       // d_code
  std::uint64_t seed = 1;

  void validate() const;
};

nlohmann::json to_json(const MsmConfig& cfg);
MsmConfig msm_config_from_json(const nlohmann::json& j);

template <typename T>
struct MsmNet {
  Variant variant = Variant::W2v2;
  nn::ConvSubsampler<T> encoder;  // Phi
  nn::BasicTensor<T> mask_embedding;  // m, [d]
  Quantizer<T> quantizer;             // Psi
  nn::BlockStack<T> context;          // Omega
  nn::Linear<T> project;              // context output -> code space
  nn::BlockStack<T> bert;             // Lambda
  nn::Linear<T> ce_head;              // Lambda output -> L logits

  MsmNet() = default;
  MsmNet(const MsmConfig& cfg, Rng& rng);

  /// E = Phi(X): [T', F] -> [ceil(T'/4), d].
  nn::BasicTensor<T> encode(nn::BasicTape<T>& tape, const nn::BasicTensor<T>& features) const;
  /// C = Omega(E~) with absolute positions added to the input.
  nn::BasicTensor<T> context_forward(nn::BasicTape<T>& tape, const nn::BasicTensor<T>& masked) const;
  /// H = Lambda(C); throws ContractViolation on the w2v2 variant.
  nn::BasicTensor<T> bert_forward(nn::BasicTape<T>& tape, const nn::BasicTensor<T>& C) const;
  void collect(nn::BasicParameterSet<T>& ps) const;
};

/// E~_t = m for t in J, e_t otherwise. Throws ContractViolation when the plan
/// length differs from E.
template <typename T>
nn::BasicTensor<T> apply_mask(nn::BasicTape<T>& tape, const nn::BasicTensor<T>& E, const masking::MaskPlan& plan,
                              const nn::BasicTensor<T>& m);

/// Float model with its parameter set.
class MsmModel {
 public:
  explicit MsmModel(const MsmConfig& cfg);
  const MsmConfig& config() const { return cfg_; }
  const MsmNet<float>& net() const { return net_; }
  nn::ParameterSet& parameters() { return params_; }
  const nn::ParameterSet& parameters() const { return params_; }

 private:
  MsmConfig cfg_;
  MsmNet<float> net_;
  nn::ParameterSet params_;
};

}  // namespace atm::msm
