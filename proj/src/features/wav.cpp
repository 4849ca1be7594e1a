// Copyright 2026 The atm-msm Authors
// SPDX-License-Identifier: Apache-2.0

#include "atm/features/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <vector>

#include "atm/common/error.hpp"

namespace atm::features {
namespace {

std::uint32_t le32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t le16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

void put32(std::vector<unsigned char>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

void put16(std::vector<unsigned char>& b, std::uint16_t v) {
  b.push_back(static_cast<unsigned char>(v & 0xff));
  b.push_back(static_cast<unsigned char>(v >> 8));
}

}  // namespace

Utterance load_wav(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("wav: cannot open " + path.string());
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  const std::string where = "wav " + path.string() + ": ";
  if (buf.size() < 12 || std::memcmp(buf.data(), "RIFF", 4) != 0) throw FormatError(where + "missing RIFF chunk id");
  if (std::memcmp(buf.data() + 8, "WAVE", 4) != 0) throw FormatError(where + "RIFF form type is not WAVE");

  bool have_fmt = false;
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::size_t data_len = 0;
  std::size_t pos = 12;
  while (pos + 8 <= buf.size()) {
    const unsigned char* chunk = buf.data() + pos;
    const std::uint32_t len = le32(chunk + 4);
    const std::size_t body = pos + 8;
    if (body + len > buf.size()) {
      if (std::memcmp(chunk, "data", 4) == 0) throw FormatError(where + "data chunk length exceeds file size");
      throw FormatError(where + "chunk length exceeds file size");
    }
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (len < 16) throw FormatError(where + "fmt chunk too short");
      format = le16(chunk + 8);
      channels = le16(chunk + 10);
      rate = le32(chunk + 12);
      bits = le16(chunk + 22);
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = chunk + 8;
      data_len = len;
    }
    pos = body + len + (len & 1u);
  }
  if (!have_fmt) throw FormatError(where + "missing fmt chunk");
  if (format != 1) throw FormatError(where + "unsupported audio_format " + std::to_string(format) + " (need PCM=1)");
  if (channels != 1) throw FormatError(where + "unsupported num_channels " + std::to_string(channels) + " (need mono)");
  if (bits != 16) throw FormatError(where + "unsupported bits_per_sample " + std::to_string(bits) + " (need 16)");
  if (rate != static_cast<std::uint32_t>(kSampleRate))
    throw FormatError(where + "unsupported sample_rate " + std::to_string(rate) + " (need 16000)");
  if (!data) throw FormatError(where + "missing data chunk");
  if (data_len % 2 != 0) throw FormatError(where + "data chunk length is not a multiple of the block size");

  Utterance u;
  u.id = path.stem().string();
  u.sample_rate = kSampleRate;
  u.samples.resize(data_len / 2);
  for (std::size_t i = 0; i < u.samples.size(); ++i) {
    const auto s = static_cast<std::int16_t>(le16(data + 2 * i));
    u.samples[i] = static_cast<float>(s) / 32768.0f;
  }
  return u;
}

void write_wav(const std::filesystem::path& path, std::span<const float> samples, int sample_rate) {
  std::vector<unsigned char> b;
  const auto data_len = static_cast<std::uint32_t>(samples.size() * 2);
  b.reserve(44 + data_len);
  b.insert(b.end(), {'R', 'I', 'F', 'F'});
  put32(b, 36 + data_len);
  b.insert(b.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  put32(b, 16);
  put16(b, 1);
  put16(b, 1);
  put32(b, static_cast<std::uint32_t>(sample_rate));
  put32(b, static_cast<std::uint32_t>(sample_rate * 2));
  put16(b, 2);
  put16(b, 16);
  b.insert(b.end(), {'d', 'a', 't', 'a'});
  put32(b, data_len);
  for (float x : samples) {
    const double scaled = std::round(static_cast<double>(x) * 32768.0);
    put16(b, static_cast<std::uint16_t>(static_cast<std::int16_t>(std::clamp(scaled, -32768.0, 32767.0))));
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("wav: cannot open " + path.string() + " for writing");
  os.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
  if (!os) throw IoError("wav: write failed for " + path.string());
}

}  // namespace atm::features
