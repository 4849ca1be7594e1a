// Copyright 2026 The atm-msm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <span>

#include "atm/features/utterance.hpp"

namespace atm::features {

/// Reads a RIFF/WAVE PCM16 mono 16 kHz file. Samples are scaled by 1/32768.
/// The utterance id is the file stem. Throws FormatError naming the
/// offending header field.
Utterance load_wav(const std::filesystem::path& path);

/// Writes PCM16 mono; samples are clamped to [-1, 1) and rounded.
void write_wav(const std::filesystem::path& path, std::span<const float> samples, int sample_rate = kSampleRate);

}  // namespace atm::features
