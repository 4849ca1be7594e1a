// Copyright 2026 The atm-msm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <memory>
#include <span>
#include <vector>

#include "atm/features/utterance.hpp"

namespace atm::features {

struct LogMelConfig {
  int sample_rate = kSampleRate;
  int frame_length = 400;  // 25 ms
  int hop = 160;           // 10 ms
  int fft_size = 512;
  int num_bins = 80;
  double low_hz = 125.0;
  double high_hz = 7600.0;
  double energy_floor = 1e-10;
};

/// 1 + floor((n - frame_length) / hop), or 0 when n < frame_length.
int num_frames(std::size_t num_samples, const LogMelConfig& cfg = {});

double hz_to_mel(double hz);
double mel_to_hz(double mel);
/// Center frequency (Hz) of each triangular filter.
std::vector<double> mel_center_frequencies(const LogMelConfig& cfg = {});

/// Periodic Hann window, |DFT|^2 power spectrum, triangular mel filters
/// between low_hz and high_hz, natural log with an energy floor.
/// Holds an FFT plan; an instance must not be shared across threads.
class LogMelExtractor {
 public:
  explicit LogMelExtractor(const LogMelConfig& cfg = {});
  ~LogMelExtractor();
  LogMelExtractor(const LogMelExtractor&) = delete;
  LogMelExtractor& operator=(const LogMelExtractor&) = delete;

  FeatureSequence compute(std::span<const float> samples) const;
  const LogMelConfig& config() const { return cfg_; }
  /// Filter weights [num_bins][fft_size / 2 + 1].
  const std::vector<std::vector<double>>& filterbank() const { return filters_; }

 private:
  struct Plan;
  LogMelConfig cfg_;
  std::vector<double> window_;
  std::vector<std::vector<double>> filters_;
  std::unique_ptr<Plan> plan_;
};

/// Throws LengthError for inputs shorter than one window.
FeatureSequence logmel(const Utterance& utt, const LogMelConfig& cfg = {});

/// Per-utterance mean/variance normalization of every bin, in place.
void normalize_mean_variance(FeatureSequence& feats);

}  // namespace atm::features
