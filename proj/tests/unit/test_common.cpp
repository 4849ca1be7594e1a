// Copyright 2026 The atm-msm Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "atm/common/batching.hpp"
#include "atm/common/error.hpp"
#include "atm/common/parallel.hpp"
#include "atm/common/rng.hpp"
#include "atm/common/stats.hpp"

using namespace atm;

TEST_CASE("rng streams are pure functions of key and counter") {
  auto a = Rng::keyed(7, "mask", 3, 9);
  auto b = Rng::keyed(7, "mask", 3, 9);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  auto c = Rng::keyed(7, "mask", 3, 10);
  auto d = Rng::keyed(7, "gumbel", 3, 9);
  auto e = Rng::keyed(8, "mask", 3, 9);
  const auto first = Rng::keyed(7, "mask", 3, 9).next_u64();
  CHECK(c.next_u64() != first);
  CHECK(d.next_u64() != first);
  CHECK(e.next_u64() != first);
}

TEST_CASE("rng uniform and below stay in range with sane moments") {
  Rng r(42);
  double s = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    s += u;
  }
  CHECK(s / n == doctest::Approx(0.5).epsilon(0.01));

  std::vector<std::int64_t> counts(7, 0);
  for (int i = 0; i < 70000; ++i) ++counts[r.below(7)];
  const std::vector<double> probs(7, 1.0 / 7);
  CHECK(stats::chi_square_gof(counts, probs).p_value > 0.001);
}

TEST_CASE("rng normal and gumbel moments") {
  Rng r(5);
  const int n = 200000;
  double s = 0, s2 = 0, g = 0;
  for (int i = 0; i < n; ++i) {
    const double z = r.normal();
    s += z;
    s2 += z * z;
    g += r.gumbel();
  }
  CHECK(std::abs(s / n) < 0.01);
  CHECK(s2 / n == doctest::Approx(1.0).epsilon(0.02));
  // Gumbel(0,1) mean is the Euler-Mascheroni constant.
  CHECK(g / n == doctest::Approx(0.5772156649).epsilon(0.02));
}

TEST_CASE("chi-square goodness of fit matches closed forms") {
  // Two cells: statistic with 1 dof; P(chi2_1 > x) = erfc(sqrt(x/2)).
  const std::vector<std::int64_t> obs{60, 40};
  const std::vector<double> p{0.5, 0.5};
  const auto r = stats::chi_square_gof(obs, p);
  CHECK(r.statistic == doctest::Approx(4.0));
  CHECK(r.dof == 1);
  CHECK(r.p_value == doctest::Approx(std::erfc(std::sqrt(2.0))).epsilon(1e-9));
  // 3 cells, 2 dof: survival function is exp(-x/2).
  const std::vector<std::int64_t> obs3{30, 30, 40};
  const std::vector<double> p3{0.3, 0.3, 0.4};
  const auto r3 = stats::chi_square_gof(obs3, p3);
  CHECK(r3.statistic == doctest::Approx(0.0));
  CHECK(r3.p_value == doctest::Approx(1.0));
  const std::vector<std::int64_t> obs4{40, 30, 30};
  const auto r4 = stats::chi_square_gof(obs4, p3);
  const double x = 100.0 / 30 + 0.0 + 100.0 / 40;
  CHECK(r4.statistic == doctest::Approx(x));
  CHECK(r4.p_value == doctest::Approx(std::exp(-x / 2)).epsilon(1e-9));
}

TEST_CASE("welch test direction and KS identity") {
  Rng r(11);
  std::vector<double> a, b, c;
  for (int i = 0; i < 2000; ++i) {
    a.push_back(r.normal() + 0.3);
    b.push_back(r.normal());
    c.push_back(r.normal());
  }
  CHECK(stats::welch_greater(a, b).p_value < 1e-6);
  CHECK(stats::welch_greater(b, a).p_value > 0.999);
  CHECK(stats::ks_two_sample(b, c).p_value > 0.001);
  CHECK(stats::ks_two_sample(a, b).p_value < 1e-6);
  // Identical samples: D = 0.
  CHECK(stats::ks_two_sample(b, b).statistic == doctest::Approx(0.0));
}

TEST_CASE("epoch sampler covers each epoch exactly once and is resumable") {
  EpochSampler s(10, 3, "test");
  std::multiset<std::size_t> seen;
  for (int step = 1; step <= 5; ++step)
    for (auto i : s.batch(step, 2)) seen.insert(i);
  for (std::size_t i = 0; i < 10; ++i) CHECK(seen.count(i) == 1);
  EpochSampler fresh(10, 3, "test");
  CHECK(fresh.batch(7, 3) == s.batch(7, 3));
  CHECK_THROWS_AS(EpochSampler(0, 1, "x").batch(1, 1), DataError);
}

TEST_CASE("parallel_for visits every index and propagates errors") {
  std::vector<int> hits(100, 0);
  parallel_for(hits.size(), [&](std::size_t i) { hits[i] += 1; });
  CHECK(std::all_of(hits.begin(), hits.end(), [](int h) { return h == 1; }));
  CHECK_THROWS_AS(parallel_for(10, [](std::size_t i) {
                    if (i == 3) throw DataError("boom");
                  }),
                  DataError);
}
