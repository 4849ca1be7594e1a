// Copyright 2026 The atm-msm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "atm/features/utterance.hpp"
#include "atm/nn/tensor.hpp"

namespace atm::features {

template <typename T>
nn::BasicTensor<T> to_tensor(const FeatureSequence& f) {
  return nn::BasicTensor<T>::from({f.frames, f.bins}, std::vector<T>(f.data.begin(), f.data.end()));
}

}  // namespace atm::features
