// Copyright 2026 The atm-msm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

namespace atm::features {

inline constexpr int kSampleRate = 16000;

struct Utterance {
  std::string id;
  std::vector<float> samples;  // in [-1, 1]
  int sample_rate = kSampleRate;
  std::vector<int> labels;     // empty when unlabeled
  std::string domain = "clean";

  double duration_s() const { return static_cast<double>(samples.size()) / sample_rate; }
};

/// Row-major [frames, bins] log-Mel matrix; 25 ms windows every 10 ms.
struct FeatureSequence {
  int frames = 0;
  int bins = 0;
  std::vector<float> data;

  float at(int t, int b) const { return data[static_cast<std::size_t>(t) * bins + b]; }
};

}  // namespace atm::features
