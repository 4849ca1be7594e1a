// Copyright 2026 The atm-msm Authors
// SPDX-License-Identifier: Apache-2.0

#include "atm/common/batching.hpp"

#include <numeric>

#include "atm/common/error.hpp"
#include "atm/common/rng.hpp"

namespace atm {

EpochSampler::EpochSampler(std::size_t corpus_size, std::uint64_t seed, std::string purpose)
    : n_(corpus_size), seed_(seed), purpose_(std::move(purpose)) {}

const std::vector<std::size_t>& EpochSampler::permutation(std::uint64_t epoch) const {
  auto it = cache_.find(epoch);
  if (it != cache_.end()) return it->second;
  if (cache_.size() > 4) cache_.erase(cache_.begin());
  std::vector<std::size_t> p(n_);
  std::iota(p.begin(), p.end(), std::size_t{0});
  auto rng = Rng::keyed(seed_, purpose_, epoch);
  for (std::size_t i = n_; i > 1; --i) std::swap(p[i - 1], p[rng.below(i)]);
  return cache_.emplace(epoch, std::move(p)).first->second;
}

std::vector<std::size_t> EpochSampler::batch(std::int64_t step, int batch_size) const {
  if (n_ == 0) throw DataError("cannot draw batches from an empty corpus");
  if (step < 1 || batch_size < 1) throw ContractViolation("batch: step and batch size must be positive");
  std::vector<std::size_t> out;
  out.reserve(static_cast<std::size_t>(batch_size));
  const auto first = static_cast<std::uint64_t>(step - 1) * static_cast<std::uint64_t>(batch_size);
  for (int i = 0; i < batch_size; ++i) {
    const std::uint64_t pos = first + static_cast<std::uint64_t>(i);
    out.push_back(permutation(pos / n_)[pos % n_]);
  }
  return out;
}

}  // namespace atm
