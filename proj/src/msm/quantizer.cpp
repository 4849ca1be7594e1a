// Copyright 2026 The atm-msm Authors
// SPDX-License-Identifier: Apache-2.0

#include "atm/msm/quantizer.hpp"

#include <algorithm>
#include <cmath>

#include "atm/common/error.hpp"

namespace atm::msm {

namespace ops = nn::ops;

template <typename T>
Quantizer<T>::Quantizer(int d_in, int codes, int code_dim, Rng& rng) : proj(d_in, codes, rng) {
  codebook = nn::BasicTensor<T>::zeros({codes, code_dim});
  for (auto& v : codebook.values()) v = static_cast<T>(rng.uniform(-1.0, 1.0));
}

template <typename T>
void Quantizer<T>::collect(nn::BasicParameterSet<T>& ps, const std::string& prefix) const {
  proj.collect(ps, prefix + ".proj");
  ps.add(prefix + ".codebook", codebook);
}

template <typename T>
std::vector<int> argmax_rows(std::span<const T> values, int rows, int cols) {
  std::vector<int> out(static_cast<std::size_t>(rows));
  for (int r = 0; r < rows; ++r) {
    const T* p = values.data() + static_cast<std::size_t>(r) * cols;
    out[static_cast<std::size_t>(r)] = static_cast<int>(std::max_element(p, p + cols) - p);
  }
  return out;
}

template <typename T>
QuantizerOutput<T> quantize_logits(nn::BasicTape<T>& tape, const nn::BasicTensor<T>& logits,
                                   const nn::BasicTensor<T>& codebook, double tau, Rng* noise, bool hard) {
  if (!(tau > 0.0)) throw ContractViolation("quantize: temperature must be positive");
  if (logits.cols() != codebook.dim(0)) throw ShapeError("quantize: logits width does not match codebook size");
  const int n = logits.rows(), L = logits.cols();
  QuantizerOutput<T> out;
  out.logits = logits;
  out.probs = ops::softmax_rows(tape, logits);
  auto perturbed = logits;
  if (noise) {
    auto g = nn::BasicTensor<T>::zeros({n, L});
    for (auto& v : g.values()) v = static_cast<T>(noise->gumbel());
    perturbed = ops::add(tape, logits, g);
  }
  out.soft = ops::softmax_rows(tape, ops::affine(tape, perturbed, static_cast<T>(1.0 / tau)));
  // Argmax of the perturbed logits rather than of `soft`: identical in exact
  // arithmetic, and immune to ties when a tiny tau saturates the softmax.
  out.targets = argmax_rows<T>(perturbed.values(), n, L);
  if (hard) {
    auto onehot = nn::BasicTensor<T>::zeros({n, L});
    auto o = onehot.values();
    for (int t = 0; t < n; ++t) o[static_cast<std::size_t>(t) * L + out.targets[t]] = T(1);
    out.selection = ops::straight_through(tape, onehot, out.soft);
  } else {
    out.selection = out.soft;
  }
  out.q = ops::matmul(tape, out.selection, codebook);
  return out;
}

template <typename T>
QuantizerOutput<T> quantize(nn::BasicTape<T>& tape, const Quantizer<T>& qz, const nn::BasicTensor<T>& E, double tau,
                            Rng* noise, bool hard) {
  return quantize_logits(tape, qz.proj.forward(tape, E), qz.codebook, tau, noise, hard);
}

double anneal_tau(double start, double end, std::int64_t step, std::int64_t total) {
  if (total <= 1) return end;
  const double f = std::clamp(static_cast<double>(step - 1) / static_cast<double>(total - 1), 0.0, 1.0);
  return start + (end - start) * f;
}

template struct Quantizer<float>;
template struct Quantizer<double>;
template std::vector<int> argmax_rows<float>(std::span<const float>, int, int);
template std::vector<int> argmax_rows<double>(std::span<const double>, int, int);
template QuantizerOutput<float> quantize_logits(nn::BasicTape<float>&, const nn::BasicTensor<float>&,
                                                const nn::BasicTensor<float>&, double, Rng*, bool);
template QuantizerOutput<double> quantize_logits(nn::BasicTape<double>&, const nn::BasicTensor<double>&,
                                                 const nn::BasicTensor<double>&, double, Rng*, bool);
template QuantizerOutput<float> quantize(nn::BasicTape<float>&, const Quantizer<float>&, const nn::BasicTensor<float>&,
                                         double, Rng*, bool);
template QuantizerOutput<double> quantize(nn::BasicTape<double>&, const Quantizer<double>&,
                                          const nn::BasicTensor<double>&, double, Rng*, bool);

}  // namespace atm::msm
