// Copyright 2026 The atm-msm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <json.hpp>
#include <string>
#include <vector>

#include "atm/nn/optim.hpp"
#include "atm/nn/tensor.hpp"

namespace atm::nn {

inline constexpr char kCheckpointMagic[] = "ATMCKPT1";

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

/// Container layout: 8-byte magic "ATMCKPT1", u64 little-endian manifest
/// length, JSON manifest {"meta", "tensors": [{name, shape, offset, count}]},
/// then little-endian float32 payloads at the listed byte offsets.
struct Checkpoint {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<NamedArray> arrays;

  const NamedArray* find(const std::string& name) const;
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

void store_parameters(Checkpoint& ckpt, const ParameterSet& params);
/// Copies values into existing parameter storage. Every parameter must be
/// present with an identical shape.
void load_parameters(const Checkpoint& ckpt, ParameterSet& params);

void store_optimizer(Checkpoint& ckpt, const ParameterSet& params, const OptimizerState& state);
/// Restores Adam moments and the step counter; returns false when the
/// checkpoint carries no optimizer state.
bool load_optimizer(const Checkpoint& ckpt, const ParameterSet& params, OptimizerState& state);

}  // namespace atm::nn
