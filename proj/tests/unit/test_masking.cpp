// Copyright 2026 The atm-msm Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <map>
#include <set>
#include <vector>

#include "atm/common/error.hpp"
#include "atm/common/rng.hpp"
#include "atm/common/stats.hpp"
#include "atm/masking/mask.hpp"
#include "oracles.hpp"

using namespace atm;
using namespace atm::masking;

namespace {

stats::ChiSquareResult pair_gof(const std::vector<float>& scores, MaskStrategy strategy,
                                const std::map<std::pair<int, int>, double>& expected, int draws, Rng& rng) {
  std::map<std::pair<int, int>, std::int64_t> counts;
  const int T = static_cast<int>(scores.size());
  for (int i = 0; i < draws; ++i) {
    auto s = sample_starts(scores, T, 2, strategy, rng);
    ++counts[{std::min(s[0], s[1]), std::max(s[0], s[1])}];
  }
  std::vector<std::int64_t> obs;
  std::vector<double> probs;
  for (const auto& [k, p] : expected) {
    obs.push_back(counts[k]);
    probs.push_back(p);
  }
  return stats::chi_square_gof(obs, probs);
}

}  // namespace

TEST_CASE("block count examples and errors") {
  CHECK(num_blocks(100, 0.40, 10) == 4);
  CHECK(num_blocks(100, 0.49, 10) == 5);
  CHECK(num_blocks(12, 0.05, 10) == 1);
  CHECK(num_blocks(10, 1.0, 10) == 1);
  CHECK_THROWS_AS(num_blocks(9, 0.4, 10), LengthError);
  CHECK_THROWS_AS(num_blocks(100, 0.0, 10), ContractViolation);
  CHECK_THROWS_AS(num_blocks(100, 1.5, 10), ContractViolation);
  CHECK_THROWS_AS(num_blocks(100, 0.4, 0), ContractViolation);
}

TEST_CASE("strategy names round trip") {
  for (auto s : kAllStrategies) CHECK(parse_strategy(to_string(s)) == s);
  CHECK_THROWS_AS(parse_strategy("median"), ConfigError);
}

TEST_CASE("single draw follows normalized scores") {
  const std::vector<float> scores{0.5f, 0.3f, 0.2f};
  Rng rng(2024);
  std::vector<std::int64_t> counts(3, 0);
  for (int i = 0; i < 100000; ++i) ++counts[sample_starts(scores, 3, 1, MaskStrategy::High, rng)[0]];
  const std::vector<double> probs{0.5, 0.3, 0.2};
  const auto r = stats::chi_square_gof(counts, probs);
  CHECK(r.p_value > 0.01);
}

TEST_CASE("two draws over three frames") {
  const std::vector<float> scores{0.5f, 0.3f, 0.2f};
  const std::vector<double> w{0.5, 0.3, 0.2};
  const auto expected = testing::pair_probabilities(w, w);
  CHECK(expected.at({0, 1}) == doctest::Approx(0.3 + 3.0 / 14).epsilon(1e-12));
  CHECK(expected.at({0, 1}) == doctest::Approx(0.5143).epsilon(1e-4));
  Rng rng(5);
  CHECK(pair_gof(scores, MaskStrategy::High, expected, 100000, rng).p_value > 0.01);
}

TEST_CASE("low strategy inverts the weights") {
  const std::vector<float> scores{0.9f, 0.1f};
  Rng rng(6);
  std::vector<std::int64_t> counts(2, 0);
  for (int i = 0; i < 50000; ++i) ++counts[sample_starts(scores, 2, 1, MaskStrategy::Low, rng)[0]];
  // P(0) = (1 - 0.9) / ((1 - 0.9) + (1 - 0.1)) = 0.1
  const std::vector<double> probs{0.1, 0.9};
  CHECK(stats::chi_square_gof(counts, probs).p_value > 0.01);
}

TEST_CASE("joint pair distribution matches enumeration") {
  Rng init(77);
  std::vector<float> scores(5);
  for (auto& s : scores) s = static_cast<float>(init.uniform(0.05, 1.0));
  std::vector<double> high(scores.begin(), scores.end()), low, flat(5, 1.0);
  for (double s : high) low.push_back(1.0 - s);
  Rng rng(78);
  SUBCASE("high") { CHECK(pair_gof(scores, MaskStrategy::High, testing::pair_probabilities(high, high), 200000, rng).p_value > 0.01); }
  SUBCASE("low") { CHECK(pair_gof(scores, MaskStrategy::Low, testing::pair_probabilities(low, low), 200000, rng).p_value > 0.01); }
  SUBCASE("random") {
    CHECK(pair_gof(scores, MaskStrategy::Random, testing::pair_probabilities(flat, flat), 200000, rng).p_value > 0.01);
  }
  SUBCASE("mixed: first draw high, second low") {
    CHECK(pair_gof(scores, MaskStrategy::Mixed, testing::pair_probabilities(high, low), 200000, rng).p_value > 0.01);
  }
}

TEST_CASE("mixed gives the extra block to high") {
  // Frames 0..2 carry all the high weight, 3..5 all the low weight.
  const std::vector<float> scores{1, 1, 1, 0, 0, 0};
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    const auto s = sample_starts(scores, 6, 3, MaskStrategy::Mixed, rng);
    REQUIRE(s.size() == 3);
    CHECK(s[0] < 3);
    CHECK(s[1] < 3);
    CHECK(s[2] >= 3);
  }
}

TEST_CASE("starts are never duplicated") {
  Rng rng(31);
  int plans = 0;
  for (int i = 0; i < 10000; ++i) {
    const int T = 1 + static_cast<int>(rng.below(60));
    const int K = static_cast<int>(rng.below(static_cast<std::uint64_t>(T) + 1));
    std::vector<float> scores(static_cast<std::size_t>(T));
    const int kind = static_cast<int>(rng.below(3));
    for (auto& s : scores)
      s = kind == 0 ? static_cast<float>(rng.uniform()) : kind == 1 ? (rng.below(4) == 0 ? 1.f : 0.f) : 1.f;
    const auto strategy = kAllStrategies[rng.below(4)];
    const auto s = sample_starts(scores, T, K, strategy, rng);
    REQUIRE(static_cast<int>(s.size()) == K);
    CHECK(std::set<int>(s.begin(), s.end()).size() == s.size());
    for (int x : s) CHECK((x >= 0 && x < T));
    ++plans;
  }
  CHECK(plans == 10000);
}

TEST_CASE("zero weights fall back to uniform") {
  Rng rng(3);
  const std::vector<float> ones(4, 1.0f);
  SampleDiagnostics diag;
  std::vector<std::int64_t> counts(4, 0);
  for (int i = 0; i < 40000; ++i) ++counts[sample_starts(ones, 4, 1, MaskStrategy::Low, rng, &diag)[0]];
  CHECK(diag.uniform_fallbacks == 40000);
  CHECK(stats::chi_square_gof(counts, std::vector<double>(4, 0.25)).p_value > 0.01);

  // Degenerate high weights: the first draw is forced, the second is uniform.
  const std::vector<float> peak{1, 0, 0, 0};
  SampleDiagnostics d2;
  for (int i = 0; i < 100; ++i) {
    const auto s = sample_starts(peak, 4, 2, MaskStrategy::High, rng, &d2);
    CHECK(s[0] == 0);
    CHECK(s[1] != 0);
  }
  CHECK(d2.uniform_fallbacks == 100);
}

TEST_CASE("sampling preconditions") {
  Rng rng(1);
  const std::vector<float> s{0.5f, 0.5f};
  CHECK_THROWS_AS(sample_starts(s, 2, 3, MaskStrategy::High, rng), ContractViolation);
  CHECK_THROWS_AS(sample_starts({}, 2, 1, MaskStrategy::High, rng), ContractViolation);
  CHECK_THROWS_AS(sample_starts(s, 3, 1, MaskStrategy::High, rng), ContractViolation);
  CHECK(sample_starts({}, 5, 2, MaskStrategy::Random, rng).size() == 2);
}

TEST_CASE("mask expansion examples") {
  const auto a = expand_mask({3, 7}, 4, 12);
  CHECK(a.J == std::vector<int>{3, 4, 5, 6, 7, 8, 9, 10});
  const auto b = expand_mask({3, 5}, 4, 12);
  CHECK(b.J == std::vector<int>{3, 4, 5, 6, 7, 8});
  CHECK(b.J.size() < 8);
  const auto c = expand_mask({10}, 4, 12);
  CHECK(c.J == std::vector<int>{10, 11});
  REQUIRE(c.mask.size() == 12);
  for (int t = 0; t < 12; ++t) CHECK(c.mask[t] == (t >= 10));
  CHECK_THROWS_AS(expand_mask({12}, 4, 12), ContractViolation);
}

TEST_CASE("mask plan invariants hold on random plans") {
  Rng rng(12);
  for (int i = 0; i < 2000; ++i) {
    const int T = 10 + static_cast<int>(rng.below(80));
    std::vector<float> scores(static_cast<std::size_t>(T));
    for (auto& s : scores) s = static_cast<float>(rng.uniform());
    const auto plan = plan_mask(scores, T, rng.uniform(0.05, 1.0), 1 + static_cast<int>(rng.below(10)),
                                kAllStrategies[rng.below(4)], rng);
    CHECK(static_cast<int>(plan.J.size()) <= static_cast<int>(plan.starts.size()) * plan.context);
    CHECK(std::is_sorted(plan.J.begin(), plan.J.end()));
    for (int t = 0; t < T; ++t) {
      bool covered = false;
      for (int s : plan.starts) covered |= s <= t && t < s + plan.context;
      CHECK(plan.mask[t] == covered);
      CHECK(std::binary_search(plan.J.begin(), plan.J.end(), t) == covered);
    }
  }
}

TEST_CASE("mask statistics examples") {
  const std::vector<float> s{0.2f, 0.4f, 0.9f, 0.5f};
  const auto full = expand_mask({0}, 4, 4);
  const auto st = mask_stats(full, s);
  CHECK(st.realized_coverage == 1.0);
  CHECK(*st.mean_masked_confidence == doctest::Approx((0.2 + 0.4 + 0.9 + 0.5) / 4).epsilon(1e-7));

  const std::vector<float> flat(20, 0.6f);
  Rng rng(1);
  for (auto strategy : kAllStrategies) {
    const auto plan = plan_mask(flat, 20, 0.4, 3, strategy, rng);
    CHECK(*mask_stats(plan, flat).mean_masked_confidence == doctest::Approx(0.6).epsilon(1e-7));
  }

  const std::vector<float> peak{1, 0, 0, 0};
  for (int i = 0; i < 100; ++i) {
    const auto plan = expand_mask(sample_starts(peak, 4, 1, MaskStrategy::High, rng), 1, 4);
    CHECK(*mask_stats(plan, peak).mean_masked_confidence == 1.0);
  }
  CHECK_FALSE(mask_stats(full, {}).mean_masked_confidence.has_value());
  CHECK(mask_stats(full, {}).realized_coverage == 1.0);
}

TEST_CASE("strategy ordering of masked confidence") {
  Rng init(40);
  const int T = 50;
  std::vector<float> scores(T);
  for (auto& s : scores) s = static_cast<float>(init.uniform(0.2, 1.0));
  std::map<MaskStrategy, std::vector<double>> means;
  Rng rng(41);
  for (auto strategy : {MaskStrategy::High, MaskStrategy::Random, MaskStrategy::Low})
    for (int i = 0; i < 10000; ++i)
      means[strategy].push_back(*mask_stats(plan_mask(scores, T, 0.4, 10, strategy, rng), scores).mean_masked_confidence);
  CHECK(stats::welch_greater(means[MaskStrategy::High], means[MaskStrategy::Random]).p_value < 0.01);
  CHECK(stats::welch_greater(means[MaskStrategy::Random], means[MaskStrategy::Low]).p_value < 0.01);
}

TEST_CASE("random and high agree on constant scores") {
  const std::vector<float> flat(30, 0.7f);
  Rng a(1), b(2);
  std::vector<double> r, h;
  for (int i = 0; i < 5000; ++i) {
    for (int s : sample_starts(flat, 30, 3, MaskStrategy::Random, a)) r.push_back(s);
    for (int s : sample_starts(flat, 30, 3, MaskStrategy::High, b)) h.push_back(s);
  }
  CHECK(stats::ks_two_sample(r, h).p_value > 0.01);
}
