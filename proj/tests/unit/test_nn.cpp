// Copyright 2026 The atm-msm Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <vector>

#include "atm/common/error.hpp"
#include "atm/common/rng.hpp"
#include "atm/nn/checkpoint.hpp"
#include "atm/nn/gradcheck.hpp"
#include "atm/nn/layers.hpp"
#include "atm/nn/ops.hpp"
#include "atm/nn/optim.hpp"
#include "oracles.hpp"

using namespace atm;
using namespace atm::nn;
using D = BasicTensor<double>;
using DTape = BasicTape<double>;

namespace {

D random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  auto t = D::zeros(std::move(shape));
  for (auto& v : t.values()) v = rng.uniform(-scale, scale);
  return t;
}

std::vector<double> random_weights(std::int64_t n, Rng& rng) {
  std::vector<double> w(static_cast<std::size_t>(n));
  for (auto& v : w) v = rng.uniform(-1.0, 1.0);
  return w;
}

// Projects a tensor to a scalar with fixed random weights so every output
// element contributes a distinct gradient.
template <typename Fn>
GradCheckReport check_fragment(Fn&& forward, std::vector<D> inputs, Rng& rng, std::int64_t out_numel) {
  const auto w = random_weights(out_numel, rng);
  return gradient_check<double>([&](DTape& tape) { return ops::weighted_sum(tape, forward(tape), w); },
                                std::move(inputs));
}

void add_params(std::vector<D>& out, const BasicParameterSet<double>& ps) {
  for (const auto& e : ps.entries()) out.push_back(e.tensor);
}

constexpr double kTol = 1e-3;

}  // namespace

TEST_CASE("backward of x*x at 3 gives 6") {
  auto x = Tensor::scalar(3.0f, true);
  Tape tape;
  auto y = ops::mul(tape, x, x);
  tape.backward(y);
  CHECK(x.grad()[0] == doctest::Approx(6.0));
}

TEST_CASE("softmax cross-entropy gradient equals p - y") {
  auto logits = D::from({1, 3}, {0.3, -1.2, 2.0}, true);
  DTape tape;
  auto loss = ops::sum(tape, ops::cross_entropy_rows(tape, logits, {1}));
  tape.backward(loss);
  const double z = std::exp(0.3) + std::exp(-1.2) + std::exp(2.0);
  const double p[3] = {std::exp(0.3) / z, std::exp(-1.2) / z, std::exp(2.0) / z};
  CHECK(logits.grad()[0] == doctest::Approx(p[0]).epsilon(1e-12));
  CHECK(logits.grad()[1] == doctest::Approx(p[1] - 1.0).epsilon(1e-12));
  CHECK(logits.grad()[2] == doctest::Approx(p[2]).epsilon(1e-12));
}

TEST_CASE("linear 4x3 in float matches finite differences") {
  Rng rng(3);
  Linear<float> lin(4, 3, rng);
  auto x = Tensor::zeros({5, 4});
  for (auto& v : x.values()) v = static_cast<float>(rng.uniform(-1, 1));
  ParameterSet ps;
  lin.collect(ps, "lin");
  std::vector<Tensor> inputs{x};
  for (const auto& e : ps.entries()) inputs.push_back(e.tensor);
  const auto w = std::vector<float>{0.3f, -0.7f, 1.1f, 0.2f, 0.5f, -0.4f, 0.9f, -1.3f, 0.6f, 0.1f, -0.2f, 0.8f,
                                    0.4f, -0.6f, 1.0f};
  // Float kernels: the relative error is dominated by float32 rounding in the
  // central difference, so a larger step keeps it well below 1e-4.
  const auto r = gradient_check<float>([&](Tape& t) { return ops::weighted_sum(t, lin.forward(t, x), w); }, inputs,
                                       5e-2, 1e-2);
  CHECK_MESSAGE(r.max_rel_error < 1e-4, r.worst);
}

TEST_CASE("linear 4x3 in double is exact to 1e-4") {
  Rng rng(4);
  Linear<double> lin(4, 3, rng);
  auto x = random_tensor({6, 4}, rng);
  BasicParameterSet<double> ps;
  lin.collect(ps, "lin");
  std::vector<D> inputs{x};
  add_params(inputs, ps);
  const auto r = check_fragment([&](DTape& t) { return lin.forward(t, x); }, inputs, rng, 18);
  CHECK_MESSAGE(r.max_rel_error < 1e-4, r.worst);
}

TEST_CASE("non-scalar loss and non-finite values are rejected") {
  auto x = D::from({2}, {1.0, 2.0}, true);
  DTape tape;
  auto y = ops::affine(tape, x, 2.0);
  CHECK_THROWS_AS(tape.backward(y), ContractViolation);

  auto z = D::from({1}, {-1.0}, true);
  DTape t2;
  try {
    ops::log(t2, z);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(e.node() == 0);
  }
}

TEST_CASE("unreferenced parameters get zero gradient") {
  auto a = D::from({1}, {2.0}, true);
  auto b = D::from({1}, {5.0}, true);
  DTape tape;
  auto loss = ops::mul(tape, a, a);
  tape.backward(loss);
  CHECK(b.grad()[0] == 0.0);
}

TEST_CASE("backward is bit-deterministic") {
  Rng init(9);
  Linear<float> lin(8, 8, init);
  auto x = Tensor::zeros({7, 8});
  for (auto& v : x.values()) v = static_cast<float>(init.normal());
  auto run = [&] {
    ParameterSet ps;
    lin.collect(ps, "l");
    ps.zero_grad();
    Tape tape;
    auto y = ops::mean(tape, ops::gelu(tape, lin.forward(tape, x)));
    tape.backward(y);
    return std::vector<float>(lin.weight.grad().begin(), lin.weight.grad().end());
  };
  CHECK(run() == run());
}

TEST_CASE("gradient check on identity is exact") {
  auto x = D::from({3}, {0.1, -2.0, 4.0});
  const std::vector<double> w{1.0, 2.0, -3.0};
  const auto r = gradient_check<double>([&](DTape& t) { return ops::weighted_sum(t, x, w); }, {x});
  CHECK(r.max_rel_error < 1e-9);
}

TEST_CASE("every layer matches finite differences on five seeds") {
  for (const auto& c : testing::layer_gradient_cases()) {
    for (auto seed : testing::kGradSeeds) {
      CAPTURE(c.name);
      CAPTURE(seed);
      Rng rng(seed);
      const auto r = c.run(rng);
      CHECK_MESSAGE(r.max_rel_error < kTol, r.worst);
    }
  }
}

TEST_CASE("schedule examples and shape") {
  AdamConfig cfg;
  cfg.peak_lr = 1e-3;
  cfg.warmup_steps = 100;
  CHECK(scheduled_lr(cfg, 100) == doctest::Approx(1e-3).epsilon(1e-15));
  CHECK(scheduled_lr(cfg, 400) == doctest::Approx(5e-4).epsilon(1e-15));
  CHECK(scheduled_lr(cfg, 1) == doctest::Approx(1e-5).epsilon(1e-15));
  double best = 0;
  std::int64_t argbest = 0;
  for (std::int64_t n = 1; n <= 1000; ++n) {
    const double lr = scheduled_lr(cfg, n);
    if (lr > best) {
      best = lr;
      argbest = n;
    }
  }
  CHECK(argbest == 100);
  // Continuity at the crossover from both sides.
  CHECK(std::abs(scheduled_lr(cfg, 101) - scheduled_lr(cfg, 100)) < 1e-5);
  CHECK(std::abs(scheduled_lr(cfg, 99) - scheduled_lr(cfg, 100)) < 1.1e-5);
}

TEST_CASE("adam single scalar step matches hand evaluation") {
  AdamConfig cfg;
  cfg.peak_lr = 1e-2;
  cfg.warmup_steps = 10;
  auto p = Tensor::from({1}, {1.0f}, true);
  ParameterSet ps;
  ps.add("p", p);
  p.grad()[0] = 1.0f;
  auto st = make_optimizer_state(ps);
  const double lr = adam_step(ps, st, cfg);
  // m = 0.1, v = 0.02; bias-corrected m_hat = v_hat = 1.
  const double lr1 = 1e-2 / 10.0;
  CHECK(lr == doctest::Approx(lr1).epsilon(1e-15));
  const double expected = 1.0 - lr1 * 1.0 / (1.0 + 1e-9);
  CHECK(static_cast<double>(p.values()[0]) == doctest::Approx(static_cast<float>(expected)).epsilon(1e-7));
  CHECK(st.step == 1);
  CHECK(st.m[0][0] == doctest::Approx(0.1f));
  CHECK(st.v[0][0] == doctest::Approx(0.02f));
}

TEST_CASE("adam with zero gradients leaves parameters unchanged") {
  Rng rng(1);
  Linear<float> lin(5, 4, rng);
  ParameterSet ps;
  lin.collect(ps, "l");
  ps.zero_grad();
  const std::vector<float> before(lin.weight.values().begin(), lin.weight.values().end());
  auto st = make_optimizer_state(ps);
  for (int i = 0; i < 5; ++i) adam_step(ps, st, AdamConfig{});
  CHECK(std::vector<float>(lin.weight.values().begin(), lin.weight.values().end()) == before);
  CHECK(st.step == 5);
}

TEST_CASE("adam rejects mismatched state") {
  Rng rng(1);
  Linear<float> lin(2, 2, rng);
  ParameterSet ps;
  lin.collect(ps, "l");
  OptimizerState st;
  CHECK_THROWS_AS(adam_step(ps, st, AdamConfig{}), ContractViolation);
}

TEST_CASE("checkpoint round trip is bit exact") {
  const auto path = std::filesystem::temp_directory_path() / "atm_test_ckpt.bin";
  Rng rng(77);
  Linear<float> lin(7, 3, rng);
  for (auto& v : lin.bias.values()) v = static_cast<float>(rng.normal());
  lin.weight.values()[0] = 1e-38f;  // denormal-adjacent value survives
  ParameterSet ps;
  lin.collect(ps, "lin");
  for (auto& g : lin.weight.grad()) g = 0.5f;
  auto st = make_optimizer_state(ps);
  adam_step(ps, st, AdamConfig{});

  Checkpoint ck;
  ck.meta["note"] = "x";
  store_parameters(ck, ps);
  store_optimizer(ck, ps, st);
  write_checkpoint(path, ck);

  Rng other(5);
  Linear<float> lin2(7, 3, other);
  ParameterSet ps2;
  lin2.collect(ps2, "lin");
  auto st2 = make_optimizer_state(ps2);
  const auto back = read_checkpoint(path);
  CHECK(back.meta["note"] == "x");
  load_parameters(back, ps2);
  CHECK(load_optimizer(back, ps2, st2));
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const auto a = ps.entries()[i].tensor.values();
    const auto b = ps2.entries()[i].tensor.values();
    CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0);
  }
  CHECK(st2.step == st.step);
  CHECK(st2.m == st.m);
  CHECK(st2.v == st.v);

  // Byte-level: writing what was read reproduces the file.
  const auto path2 = path.string() + ".2";
  write_checkpoint(path2, back);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  const std::string b1((std::istreambuf_iterator<char>(f1)), {});
  const std::string b2((std::istreambuf_iterator<char>(f2)), {});
  CHECK(b1 == b2);
  CHECK(b1.substr(0, 8) == "ATMCKPT1");

  Linear<float> wrong(3, 7, other);
  ParameterSet ps3;
  wrong.collect(ps3, "lin");
  CHECK_THROWS(load_parameters(back, ps3));
  std::filesystem::remove(path);
  std::filesystem::remove(path2);
}

TEST_CASE("corrupt checkpoint is a format error") {
  const auto path = std::filesystem::temp_directory_path() / "atm_test_bad.ckpt";
  {
    std::ofstream f(path, std::ios::binary);
    f << "NOTACKPTxxxxxxxx";
  }
  CHECK_THROWS_AS(read_checkpoint(path), FormatError);
  std::filesystem::remove(path);
}
