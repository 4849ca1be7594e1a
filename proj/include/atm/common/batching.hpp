// Copyright 2026 The atm-msm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace atm {

/// Deterministic minibatches: the corpus is walked in a fresh permutation per
/// epoch, each permutation keyed by (seed, purpose, epoch). The batch for a
/// given step depends only on the step number, so a resumed run sees exactly
/// the batches it would have seen without interruption.
class EpochSampler {
 public:
  EpochSampler(std::size_t corpus_size, std::uint64_t seed, std::string purpose);

  /// Indices for 1-based `step`.
  std::vector<std::size_t> batch(std::int64_t step, int batch_size) const;

 private:
  const std::vector<std::size_t>& permutation(std::uint64_t epoch) const;

  std::size_t n_;
  std::uint64_t seed_;
  std::string purpose_;
  mutable std::map<std::uint64_t, std::vector<std::size_t>> cache_;
};

}  // namespace atm
