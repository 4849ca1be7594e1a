// Copyright 2026 The atm-msm Authors
// SPDX-License-Identifier: Apache-2.0

#include "atm/features/logmel.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numbers>

#include "atm/common/error.hpp"

namespace atm::features {
namespace {

// FFTW planner calls are not thread-safe; execution on distinct plans is.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

}  // namespace

struct LogMelExtractor::Plan {
  double* in = nullptr;
  fftw_complex* out = nullptr;
  fftw_plan plan = nullptr;

  explicit Plan(int n) {
    std::lock_guard lock(planner_mutex());
    in = fftw_alloc_real(static_cast<std::size_t>(n));
    out = fftw_alloc_complex(static_cast<std::size_t>(n / 2 + 1));
    plan = fftw_plan_dft_r2c_1d(n, in, out, FFTW_ESTIMATE);
  }
  ~Plan() {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(plan);
    fftw_free(in);
    fftw_free(out);
  }
};

int num_frames(std::size_t num_samples, const LogMelConfig& cfg) {
  if (num_samples < static_cast<std::size_t>(cfg.frame_length)) return 0;
  return 1 + static_cast<int>((num_samples - static_cast<std::size_t>(cfg.frame_length)) / static_cast<std::size_t>(cfg.hop));
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

std::vector<double> mel_center_frequencies(const LogMelConfig& cfg) {
  const double lo = hz_to_mel(cfg.low_hz), hi = hz_to_mel(cfg.high_hz);
  std::vector<double> centers(static_cast<std::size_t>(cfg.num_bins));
  for (int m = 0; m < cfg.num_bins; ++m) centers[m] = mel_to_hz(lo + (hi - lo) * (m + 1) / (cfg.num_bins + 1));
  return centers;
}

LogMelExtractor::LogMelExtractor(const LogMelConfig& cfg) : cfg_(cfg) {
  if (cfg.fft_size < cfg.frame_length) throw ConfigError("logmel: fft_size smaller than frame_length");
  if (cfg.num_bins < 1 || cfg.low_hz < 0 || cfg.high_hz <= cfg.low_hz || cfg.high_hz > cfg.sample_rate / 2.0)
    throw ConfigError("logmel: invalid mel filterbank range");
  window_.resize(static_cast<std::size_t>(cfg.frame_length));
  for (int n = 0; n < cfg.frame_length; ++n)
    window_[n] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * n / cfg.frame_length);

  const int nbins = cfg.fft_size / 2 + 1;
  const double lo = hz_to_mel(cfg.low_hz), hi = hz_to_mel(cfg.high_hz);
  std::vector<double> edges(static_cast<std::size_t>(cfg.num_bins + 2));
  for (int i = 0; i < cfg.num_bins + 2; ++i) edges[i] = mel_to_hz(lo + (hi - lo) * i / (cfg.num_bins + 1));
  filters_.assign(static_cast<std::size_t>(cfg.num_bins), std::vector<double>(static_cast<std::size_t>(nbins), 0.0));
  for (int m = 0; m < cfg.num_bins; ++m) {
    const double left = edges[m], center = edges[m + 1], right = edges[m + 2];
    for (int k = 0; k < nbins; ++k) {
      const double f = static_cast<double>(k) * cfg.sample_rate / cfg.fft_size;
      if (f > left && f <= center) filters_[m][k] = (f - left) / (center - left);
      else if (f > center && f < right) filters_[m][k] = (right - f) / (right - center);
    }
  }
  plan_ = std::make_unique<Plan>(cfg.fft_size);
}

LogMelExtractor::~LogMelExtractor() = default;

FeatureSequence LogMelExtractor::compute(std::span<const float> samples) const {
  const int frames = num_frames(samples.size(), cfg_);
  if (frames == 0)
    throw LengthError("logmel: need at least " + std::to_string(cfg_.frame_length) + " samples, got " +
                      std::to_string(samples.size()));
  const int nbins = cfg_.fft_size / 2 + 1;
  const double log_floor = std::log(cfg_.energy_floor);
  FeatureSequence out;
  out.frames = frames;
  out.bins = cfg_.num_bins;
  out.data.resize(static_cast<std::size_t>(frames) * cfg_.num_bins);
  std::vector<double> power(static_cast<std::size_t>(nbins));
  for (int t = 0; t < frames; ++t) {
    const std::size_t start = static_cast<std::size_t>(t) * cfg_.hop;
    std::fill(plan_->in, plan_->in + cfg_.fft_size, 0.0);
    for (int n = 0; n < cfg_.frame_length; ++n) plan_->in[n] = static_cast<double>(samples[start + n]) * window_[n];
    fftw_execute(plan_->plan);
    for (int k = 0; k < nbins; ++k) power[k] = plan_->out[k][0] * plan_->out[k][0] + plan_->out[k][1] * plan_->out[k][1];
    for (int m = 0; m < cfg_.num_bins; ++m) {
      double e = 0.0;
      const auto& w = filters_[m];
      for (int k = 0; k < nbins; ++k) e += w[k] * power[k];
      out.data[static_cast<std::size_t>(t) * cfg_.num_bins + m] =
          static_cast<float>(e > cfg_.energy_floor ? std::log(e) : log_floor);
    }
  }
  return out;
}

FeatureSequence logmel(const Utterance& utt, const LogMelConfig& cfg) {
  if (utt.sample_rate != cfg.sample_rate)
    throw FormatError("logmel: utterance '" + utt.id + "' has sample rate " + std::to_string(utt.sample_rate));
  LogMelExtractor ex(cfg);
  return ex.compute(utt.samples);
}

void normalize_mean_variance(FeatureSequence& feats) {
  if (feats.frames == 0) return;
  for (int b = 0; b < feats.bins; ++b) {
    double s = 0.0, s2 = 0.0;
    for (int t = 0; t < feats.frames; ++t) {
      const double v = feats.at(t, b);
      s += v;
      s2 += v * v;
    }
    const double mu = s / feats.frames;
    const double var = std::max(s2 / feats.frames - mu * mu, 0.0);
    const double inv = 1.0 / std::sqrt(var + 1e-5);
    for (int t = 0; t < feats.frames; ++t) {
      auto& v = feats.data[static_cast<std::size_t>(t) * feats.bins + b];
      v = static_cast<float>((v - mu) * inv);
    }
  }
}

}  // namespace atm::features
