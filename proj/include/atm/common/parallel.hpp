// Copyright 2026 The atm-msm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>

namespace atm {

/// Worker count for per-utterance fan-out: ATM_NUM_WORKERS if set and
/// positive, otherwise the hardware concurrency.
int num_workers();

/// Runs fn(i) for i in [0, n) on up to num_workers() threads. Work items must
/// be independent; the first exception thrown is rethrown after all threads
/// join.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace atm
