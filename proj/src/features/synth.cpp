// Copyright 2026 The atm-msm Authors
// SPDX-License-Identifier: Apache-2.0

#include "atm/features/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "atm/common/error.hpp"
#include "atm/common/rng.hpp"

namespace atm::features {
namespace {

constexpr double kLowBandLo = 300.0, kLowBandHi = 1400.0;
constexpr double kHighBandLo = 1800.0, kHighBandHi = 3800.0;
constexpr double kRampS = 0.005;

}  // namespace

void SynthConfig::validate() const {
  if (num_labels < 2) throw ConfigError("synth: num_labels must be >= 2, got " + std::to_string(num_labels));
  if (count < 0) throw ConfigError("synth: count must be >= 0");
  if (min_duration_s <= 0 || max_duration_s < min_duration_s)
    throw ConfigError("synth: invalid duration range");
  if (min_segment_s <= 0 || max_segment_s < min_segment_s) throw ConfigError("synth: invalid segment range");
  if (domain != "clean" && domain != "shifted") throw ConfigError("synth: unknown domain '" + domain + "'");
}

std::pair<double, double> label_frequencies(int label, int num_labels) {
  const double frac = num_labels > 1 ? static_cast<double>(label) / (num_labels - 1) : 0.0;
  return {kLowBandLo + frac * (kLowBandHi - kLowBandLo), kHighBandLo + frac * (kHighBandHi - kHighBandLo)};
}

std::string synth_utterance_id(const SynthConfig& cfg, int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%05d", index);
  return cfg.id_prefix + "-" + cfg.domain + "-" + buf;
}

SynthUtterance synth_one(const SynthConfig& cfg, int index) {
  cfg.validate();
  Rng rng = Rng::keyed(cfg.seed, "synth/" + cfg.domain, static_cast<std::uint64_t>(index));
  const bool shifted = cfg.domain == "shifted";
  const double offset = shifted ? cfg.shifted_offset_hz : 0.0;
  const double snr_db = shifted ? cfg.shifted_snr_db : cfg.clean_snr_db;
  // Two sinusoids of amplitude a carry power a^2.
  const double signal_power = cfg.amplitude * cfg.amplitude;
  const double noise_std = std::sqrt(signal_power / std::pow(10.0, snr_db / 10.0));

  const auto total = static_cast<int>(std::lround(rng.uniform(cfg.min_duration_s, cfg.max_duration_s) * kSampleRate));
  const auto min_seg = static_cast<int>(std::lround(cfg.min_segment_s * kSampleRate));
  const auto max_seg = static_cast<int>(std::lround(cfg.max_segment_s * kSampleRate));

  SynthUtterance out;
  out.utt.id = synth_utterance_id(cfg, index);
  out.utt.domain = cfg.domain;
  out.utt.samples.assign(static_cast<std::size_t>(total), 0.0f);

  int pos = 0;
  int prev = -1;
  while (pos < total) {
    int len = min_seg + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_seg - min_seg + 1)));
    const int remaining = total - pos;
    if (remaining - len < min_seg) len = remaining;  // absorb a too-short tail
    if (len > remaining) len = remaining;
    // No immediate repeats: CTC could not separate two adjacent identical segments.
    int label = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.num_labels - (prev >= 0 ? 1 : 0))));
    if (prev >= 0 && label >= prev) ++label;
    out.segments.emplace_back(pos, pos + len);
    out.utt.labels.push_back(label);
    prev = label;
    pos += len;
  }

  for (std::size_t s = 0; s < out.segments.size(); ++s) {
    const auto [begin, end] = out.segments[s];
    const auto [f1, f2] = label_frequencies(out.utt.labels[s], cfg.num_labels);
    const double ph1 = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double ph2 = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double w1 = 2.0 * std::numbers::pi * (f1 + offset) / kSampleRate;
    const double w2 = 2.0 * std::numbers::pi * (f2 + offset) / kSampleRate;
    const int len = end - begin;
    const int ramp = std::min(static_cast<int>(kRampS * kSampleRate), len / 2);
    for (int n = 0; n < len; ++n) {
      double env = 1.0;
      if (ramp > 0 && n < ramp) env = 0.5 - 0.5 * std::cos(std::numbers::pi * n / ramp);
      if (ramp > 0 && len - 1 - n < ramp) env = std::min(env, 0.5 - 0.5 * std::cos(std::numbers::pi * (len - 1 - n) / ramp));
      const double s = cfg.amplitude * env * (std::sin(w1 * n + ph1) + std::sin(w2 * n + ph2));
      out.utt.samples[static_cast<std::size_t>(begin + n)] = static_cast<float>(s);
    }
  }
  for (auto& x : out.utt.samples) x = static_cast<float>(std::clamp(x + noise_std * rng.normal(), -1.0, 1.0));
  return out;
}

std::vector<SynthUtterance> synth_corpus(const SynthConfig& cfg) {
  cfg.validate();
  std::vector<SynthUtterance> out;
  out.reserve(static_cast<std::size_t>(cfg.count));
  for (int i = 0; i < cfg.count; ++i) out.push_back(synth_one(cfg, i));
  return out;
}

}  // namespace atm::features
