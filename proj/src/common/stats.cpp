// Copyright 2026 The atm-msm Authors
// SPDX-License-Identifier: Apache-2.0

#include "atm/common/stats.hpp"

#include <algorithm>
#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>

#include "atm/common/error.hpp"

namespace atm::stats {

double mean(std::span<const double> xs) {
  if (xs.empty()) return 0.0;
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

double variance(std::span<const double> xs) {
  if (xs.size() < 2) return 0.0;
  const double m = mean(xs);
  double s = 0.0;
  for (double x : xs) s += (x - m) * (x - m);
  return s / static_cast<double>(xs.size() - 1);
}

ChiSquareResult chi_square_gof(std::span<const std::int64_t> observed,
                               std::span<const double> expected_prob) {
  if (observed.size() != expected_prob.size() || observed.empty())
    throw ContractViolation("chi_square_gof: observed/expected size mismatch");
  std::int64_t n = 0;
  for (auto o : observed) n += o;
  ChiSquareResult r;
  int cells = 0;
  for (std::size_t i = 0; i < observed.size(); ++i) {
    const double e = expected_prob[i] * static_cast<double>(n);
    if (e <= 0.0) {
      if (observed[i] != 0) {
        r.statistic = std::numeric_limits<double>::infinity();
        r.p_value = 0.0;
        return r;
      }
      continue;
    }
    const double d = static_cast<double>(observed[i]) - e;
    r.statistic += d * d / e;
    ++cells;
  }
  r.dof = cells - 1;
  if (r.dof <= 0) return r;
  boost::math::chi_squared dist(r.dof);
  r.p_value = boost::math::cdf(boost::math::complement(dist, r.statistic));
  return r;
}

TwoSampleResult welch_greater(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) throw ContractViolation("welch_greater: need >= 2 samples per group");
  const double va = variance(a) / static_cast<double>(a.size());
  const double vb = variance(b) / static_cast<double>(b.size());
  TwoSampleResult r;
  const double diff = mean(a) - mean(b);
  const double se = std::sqrt(va + vb);
  if (se == 0.0) {
    r.statistic = diff > 0 ? std::numeric_limits<double>::infinity()
                           : (diff < 0 ? -std::numeric_limits<double>::infinity() : 0.0);
    r.p_value = diff > 0 ? 0.0 : (diff < 0 ? 1.0 : 0.5);
    return r;
  }
  r.statistic = diff / se;
  const double dof = (va + vb) * (va + vb) /
                     (va * va / static_cast<double>(a.size() - 1) + vb * vb / static_cast<double>(b.size() - 1));
  boost::math::students_t dist(dof);
  r.p_value = boost::math::cdf(boost::math::complement(dist, r.statistic));
  return r;
}

namespace {

// P(K > x) for the Kolmogorov distribution.
double kolmogorov_survival(double x) {
  if (x <= 0.0) return 1.0;
  if (x < 0.27) return 1.0;
  double s = 0.0;
  for (int k = 1; k <= 100; ++k) {
    const double term = std::exp(-2.0 * k * k * x * x);
    s += (k % 2 == 1 ? term : -term);
    if (term < 1e-16) break;
  }
  return std::clamp(2.0 * s, 0.0, 1.0);
}

}  // namespace

TwoSampleResult ks_two_sample(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw ContractViolation("ks_two_sample: empty sample");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  const double ne = na * nb / (na + nb);
  TwoSampleResult r;
  r.statistic = d;
  const double sq = std::sqrt(ne);
  r.p_value = kolmogorov_survival((sq + 0.12 + 0.11 / sq) * d);
  return r;
}

}  // namespace atm::stats
