// Copyright 2026 The atm-msm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string_view>

namespace atm {

/// Counter-based random stream. A stream is identified by a 64-bit key; the
/// n-th draw is a pure function of (key, n), so streams keyed by
/// (seed, utterance, step) reproduce regardless of evaluation order.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  /// Derives an independent stream for a named purpose and up to two indices.
  static Rng keyed(std::uint64_t seed, std::string_view purpose, std::uint64_t a = 0,
                   std::uint64_t b = 0);

  Rng split(std::uint64_t tag) const;

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  double normal();
  /// Standard Gumbel(0, 1) sample.
  double gumbel();

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

 private:
  Rng(std::uint64_t key, std::uint64_t counter) : key_(key), counter_(counter) {}

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

std::uint64_t hash_string(std::string_view s);
std::uint64_t mix64(std::uint64_t x);

}  // namespace atm
