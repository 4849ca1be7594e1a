// Copyright 2026 The atm-msm Authors
// SPDX-License-Identifier: Apache-2.0

#include "atm/scorer/ctc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "atm/common/error.hpp"

namespace atm::scorer {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

}  // namespace

int ctc_min_frames(std::span<const int> target) {
  int n = static_cast<int>(target.size());
  for (std::size_t i = 1; i < target.size(); ++i)
    if (target[i] == target[i - 1]) ++n;
  return n;
}

CtcResult ctc_forward_backward(std::span<const double> logits, int frames, int classes, std::span<const int> target,
                               int blank) {
  if (frames <= 0 || classes <= 0 || static_cast<std::int64_t>(logits.size()) != static_cast<std::int64_t>(frames) * classes)
    throw ContractViolation("ctc: logits do not match [frames, classes]");
  if (blank < 0 || blank >= classes) throw ContractViolation("ctc: blank index out of range");
  for (int l : target)
    if (l < 0 || l >= classes || l == blank) throw ContractViolation("ctc: target label out of range or blank");
  const int needed = ctc_min_frames(target);
  if (frames < needed)
    throw InfeasibleAlignment("ctc: " + std::to_string(frames) + " frames cannot emit a target needing " +
                              std::to_string(needed));

  // Per-frame log-softmax.
  std::vector<double> logp(logits.size());
  for (int t = 0; t < frames; ++t) {
    const double* r = logits.data() + static_cast<std::size_t>(t) * classes;
    const double mx = *std::max_element(r, r + classes);
    double s = 0.0;
    for (int c = 0; c < classes; ++c) s += std::exp(r[c] - mx);
    const double lse = mx + std::log(s);
    for (int c = 0; c < classes; ++c) logp[static_cast<std::size_t>(t) * classes + c] = r[c] - lse;
  }

  const int S = 2 * static_cast<int>(target.size()) + 1;
  std::vector<int> ext(static_cast<std::size_t>(S), blank);
  for (std::size_t i = 0; i < target.size(); ++i) ext[2 * i + 1] = target[i];
  auto emit = [&](int t, int s) { return logp[static_cast<std::size_t>(t) * classes + ext[s]]; };
  auto can_skip = [&](int s) { return s >= 2 && ext[s] != blank && ext[s] != ext[s - 2]; };

  // alpha includes the emission at t; beta covers frames t+1..T-1 only.
  std::vector<double> alpha(static_cast<std::size_t>(frames) * S, kNegInf);
  std::vector<double> beta(static_cast<std::size_t>(frames) * S, kNegInf);
  auto A = [&](int t, int s) -> double& { return alpha[static_cast<std::size_t>(t) * S + s]; };
  auto B = [&](int t, int s) -> double& { return beta[static_cast<std::size_t>(t) * S + s]; };

  A(0, 0) = emit(0, 0);
  if (S > 1) A(0, 1) = emit(0, 1);
  for (int t = 1; t < frames; ++t) {
    for (int s = 0; s < S; ++s) {
      double a = A(t - 1, s);
      if (s >= 1) a = log_add(a, A(t - 1, s - 1));
      if (can_skip(s)) a = log_add(a, A(t - 1, s - 2));
      A(t, s) = a == kNegInf ? kNegInf : a + emit(t, s);
    }
  }
  double log_p = A(frames - 1, S - 1);
  if (S > 1) log_p = log_add(log_p, A(frames - 1, S - 2));

  B(frames - 1, S - 1) = 0.0;
  if (S > 1) B(frames - 1, S - 2) = 0.0;
  for (int t = frames - 2; t >= 0; --t) {
    for (int s = 0; s < S; ++s) {
      double b = B(t + 1, s) + emit(t + 1, s);
      if (s + 1 < S) b = log_add(b, B(t + 1, s + 1) + emit(t + 1, s + 1));
      if (s + 2 < S && can_skip(s + 2)) b = log_add(b, B(t + 1, s + 2) + emit(t + 1, s + 2));
      B(t, s) = b;
    }
  }

  CtcResult r;
  r.loss = -log_p;
  r.logit_grad.assign(logits.size(), 0.0);
  std::vector<double> occ(static_cast<std::size_t>(classes));
  for (int t = 0; t < frames; ++t) {
    std::fill(occ.begin(), occ.end(), kNegInf);
    for (int s = 0; s < S; ++s) occ[ext[s]] = log_add(occ[ext[s]], A(t, s) + B(t, s));
    for (int c = 0; c < classes; ++c) {
      const auto k = static_cast<std::size_t>(t) * classes + c;
      const double gamma = occ[c] == kNegInf ? 0.0 : std::exp(occ[c] - log_p);
      r.logit_grad[k] = std::exp(logp[k]) - gamma;
    }
  }
  return r;
}

template <typename T>
nn::BasicTensor<T> ctc_loss(nn::BasicTape<T>& tape, const nn::BasicTensor<T>& logits, const std::vector<int>& target,
                            int blank) {
  const int frames = logits.rows(), classes = logits.cols();
  std::vector<double> lg(logits.values().begin(), logits.values().end());
  auto res = ctc_forward_backward(lg, frames, classes, target, blank);
  auto out = nn::BasicTensor<T>::scalar(static_cast<T>(res.loss));
  if (!tape.tracking({&logits})) {
    tape.check_finite("ctc_loss", out);
    return out;
  }
  tape.record("ctc_loss", {logits}, out, [logits, out, grad = std::move(res.logit_grad)]() mutable {
    const T g = out.grad()[0];
    auto gl = logits.grad();
    for (std::size_t i = 0; i < gl.size(); ++i) gl[i] += g * static_cast<T>(grad[i]);
  });
  return out;
}

template nn::BasicTensor<float> ctc_loss(nn::BasicTape<float>&, const nn::BasicTensor<float>&, const std::vector<int>&, int);
template nn::BasicTensor<double> ctc_loss(nn::BasicTape<double>&, const nn::BasicTensor<double>&, const std::vector<int>&,
                                          int);

std::vector<int> greedy_decode(std::span<const float> scores, int frames, int classes, int blank) {
  std::vector<int> out;
  int prev = -1;
  for (int t = 0; t < frames; ++t) {
    const float* r = scores.data() + static_cast<std::size_t>(t) * classes;
    const int best = static_cast<int>(std::max_element(r, r + classes) - r);
    if (best != prev && best != blank) out.push_back(best);
    prev = best;
  }
  return out;
}

int edit_distance(std::span<const int> a, std::span<const int> b) {
  std::vector<int> row(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) row[j] = static_cast<int>(j);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    int diag = row[0];
    row[0] = static_cast<int>(i);
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const int up = row[j];
      row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (a[i - 1] == b[j - 1] ? 0 : 1)});
      diag = up;
    }
  }
  return row[b.size()];
}

}  // namespace atm::scorer
