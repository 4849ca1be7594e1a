// Copyright 2026 The atm-msm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace atm::stats {

double mean(std::span<const double> xs);
/// Unbiased sample variance; 0 for fewer than two samples.
double variance(std::span<const double> xs);

struct ChiSquareResult {
  double statistic = 0.0;
  int dof = 0;
  double p_value = 1.0;
};

/// Pearson goodness-of-fit of observed counts against expected probabilities.
/// Cells with zero expected probability must have zero count.
ChiSquareResult chi_square_gof(std::span<const std::int64_t> observed,
                               std::span<const double> expected_prob);

struct TwoSampleResult {
  double statistic = 0.0;
  double p_value = 1.0;
};

/// Welch t-test for H1: mean(a) > mean(b). One-sided p-value.
TwoSampleResult welch_greater(std::span<const double> a, std::span<const double> b);

/// Two-sample Kolmogorov-Smirnov test with the asymptotic Kolmogorov
/// distribution. Two-sided p-value.
TwoSampleResult ks_two_sample(std::vector<double> a, std::vector<double> b);

}  // namespace atm::stats
