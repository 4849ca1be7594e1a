// Copyright 2026 The atm-msm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "atm/features/utterance.hpp"

namespace atm::features {

/// Labeled pseudo-speech: each utterance is a sequence of 50-300 ms segments,
/// segment for label v = two sinusoids at label-specific frequencies plus
/// white noise. The "shifted" domain moves every frequency up by an offset
/// and lowers the SNR.
struct SynthConfig {
  int num_labels = 8;
  int count = 100;
  double min_duration_s = 1.0;
  double max_duration_s = 4.0;
  double min_segment_s = 0.05;
  double max_segment_s = 0.30;
  std::string domain = "clean";
  double clean_snr_db = 20.0;
  double shifted_snr_db = 5.0;
  double shifted_offset_hz = 150.0;
  double amplitude = 0.25;  // per sinusoid
  std::uint64_t seed = 1;
  std::string id_prefix = "utt";

  /// Throws ConfigError for an invalid configuration (e.g. fewer than 2 labels).
  void validate() const;
};

struct SynthUtterance {
  Utterance utt;
  std::vector<std::pair<int, int>> segments;  // [begin, end) sample ranges, one per label
};

/// The two tone frequencies (Hz) carried by a label in the clean domain.
std::pair<double, double> label_frequencies(int label, int num_labels);

std::string synth_utterance_id(const SynthConfig& cfg, int index);

/// Generates utterance `index` of the corpus; pure in (cfg, index).
SynthUtterance synth_one(const SynthConfig& cfg, int index);

std::vector<SynthUtterance> synth_corpus(const SynthConfig& cfg);

}  // namespace atm::features
