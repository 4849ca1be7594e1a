// Copyright 2026 The atm-msm Authors
// SPDX-License-Identifier: Apache-2.0

#include "atm/nn/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>

#include "atm/common/error.hpp"

namespace atm::nn::ops {
namespace {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
Eigen::Map<MatR<T>> mat(std::span<T> s, int r, int c) {
  return Eigen::Map<MatR<T>>(s.data(), r, c);
}

template <typename T>
Eigen::Map<const MatR<T>> cmat(std::span<const T> s, int r, int c) {
  return Eigen::Map<const MatR<T>>(s.data(), r, c);
}

template <typename T>
void require_same_shape(const Ten<T>& a, const Ten<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

template <typename T>
void require_rank(const Ten<T>& x, int rank, const char* op) {
  if (x.rank() != rank)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(x.shape()));
}

// Elementwise unary op with derivative expressed through (x, y).
template <typename T, typename F, typename D>
Ten<T> unary(BasicTape<T>& tape, const char* name, const Ten<T>& x, F f, D dfdx) {
  auto out = Ten<T>::zeros(x.shape());
  auto xv = x.values();
  auto yv = out.values();
  for (std::size_t i = 0; i < xv.size(); ++i) yv[i] = f(xv[i]);
  if (!tape.tracking({&x})) {
    tape.check_finite(name, out);
    return out;
  }
  tape.record(name, {x}, out, [x, out, dfdx]() mutable {
    auto g = out.grad();
    auto gx = x.grad();
    auto xv2 = x.values();
    auto yv2 = out.values();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * dfdx(xv2[i], yv2[i]);
  });
  return out;
}

}  // namespace

template <typename T>
Ten<T> matmul(BasicTape<T>& tape, const Ten<T>& a, const Ten<T>& b, bool ta, bool tb) {
  if (a.rank() > 2 || b.rank() > 2) throw ShapeError("matmul: inputs must be rank <= 2");
  const int ar = a.rows(), ac = a.cols(), br = b.rows(), bc = b.cols();
  const int m = ta ? ac : ar;
  const int ka = ta ? ar : ac;
  const int kb = tb ? bc : br;
  const int n = tb ? br : bc;
  if (ka != kb)
    throw ShapeError("matmul: inner dimensions differ " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  auto out = Ten<T>::zeros({m, n});
  {
    auto A = cmat<T>(a.values(), ar, ac);
    auto B = cmat<T>(b.values(), br, bc);
    auto C = mat<T>(out.values(), m, n);
    if (!ta && !tb) C.noalias() = A * B;
    else if (ta && !tb) C.noalias() = A.transpose() * B;
    else if (!ta && tb) C.noalias() = A * B.transpose();
    else C.noalias() = A.transpose() * B.transpose();
  }
  if (!tape.tracking({&a, &b})) {
    tape.check_finite("matmul", out);
    return out;
  }
  tape.record("matmul", {a, b}, out, [a, b, out, ta, tb, ar, ac, br, bc, m, n]() mutable {
    auto dC = cmat<T>(std::span<const T>(out.grad()), m, n);
    auto A = cmat<T>(a.values(), ar, ac);
    auto B = cmat<T>(b.values(), br, bc);
    if (a.requires_grad()) {
      auto dA = mat<T>(a.grad(), ar, ac);
      if (!ta && !tb) dA.noalias() += dC * B.transpose();
      else if (!ta && tb) dA.noalias() += dC * B;
      else if (ta && !tb) dA.noalias() += B * dC.transpose();
      else dA.noalias() += B.transpose() * dC.transpose();
    }
    if (b.requires_grad()) {
      auto dB = mat<T>(b.grad(), br, bc);
      if (!ta && !tb) dB.noalias() += A.transpose() * dC;
      else if (ta && !tb) dB.noalias() += A * dC;
      else if (!ta && tb) dB.noalias() += dC.transpose() * A;
      else dB.noalias() += dC.transpose() * A.transpose();
    }
  });
  return out;
}

template <typename T>
Ten<T> add(BasicTape<T>& tape, const Ten<T>& a, const Ten<T>& b) {
  require_same_shape(a, b, "add");
  auto out = a.detach();
  auto o = out.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bv[i];
  if (!tape.tracking({&a, &b})) {
    tape.check_finite("add", out);
    return out;
  }
  tape.record("add", {a, b}, out, [a, b, out]() mutable {
    auto g = out.grad();
    if (a.requires_grad()) {
      auto ga = a.grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (b.requires_grad()) {
      auto gb = b.grad();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
    }
  });
  return out;
}

template <typename T>
Ten<T> sub(BasicTape<T>& tape, const Ten<T>& a, const Ten<T>& b) {
  require_same_shape(a, b, "sub");
  auto out = a.detach();
  auto o = out.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bv[i];
  if (!tape.tracking({&a, &b})) {
    tape.check_finite("sub", out);
    return out;
  }
  tape.record("sub", {a, b}, out, [a, b, out]() mutable {
    auto g = out.grad();
    if (a.requires_grad()) {
      auto ga = a.grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (b.requires_grad()) {
      auto gb = b.grad();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
  return out;
}

template <typename T>
Ten<T> mul(BasicTape<T>& tape, const Ten<T>& a, const Ten<T>& b) {
  require_same_shape(a, b, "mul");
  auto out = a.detach();
  auto o = out.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bv[i];
  if (!tape.tracking({&a, &b})) {
    tape.check_finite("mul", out);
    return out;
  }
  tape.record("mul", {a, b}, out, [a, b, out]() mutable {
    auto g = out.grad();
    auto av = a.values();
    auto bv2 = b.values();
    if (a.requires_grad()) {
      auto ga = a.grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv2[i];
    }
    if (b.requires_grad()) {
      auto gb = b.grad();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
  return out;
}

template <typename T>
Ten<T> add_row(BasicTape<T>& tape, const Ten<T>& x, const Ten<T>& bias) {
  const int n = x.rows(), d = x.cols();
  if (bias.numel() != d)
    throw ShapeError("add_row: bias " + shape_str(bias.shape()) + " does not match " + shape_str(x.shape()));
  auto out = x.detach();
  auto o = out.values();
  auto bv = bias.values();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) o[static_cast<std::size_t>(i) * d + j] += bv[j];
  if (!tape.tracking({&x, &bias})) {
    tape.check_finite("add_row", out);
    return out;
  }
  tape.record("add_row", {x, bias}, out, [x, bias, out, n, d]() mutable {
    auto g = out.grad();
    if (x.requires_grad()) {
      auto gx = x.grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (bias.requires_grad()) {
      auto gb = bias.grad();
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) gb[j] += g[static_cast<std::size_t>(i) * d + j];
    }
  });
  return out;
}

template <typename T>
Ten<T> affine(BasicTape<T>& tape, const Ten<T>& x, T a, T b) {
  return unary(
      tape, "affine", x, [a, b](T v) { return a * v + b; }, [a](T, T) { return a; });
}

template <typename T>
Ten<T> scale_rows(BasicTape<T>& tape, const Ten<T>& x, const std::vector<T>& w) {
  const int n = x.rows(), d = x.cols();
  if (static_cast<int>(w.size()) != n) throw ShapeError("scale_rows: weight count does not match rows");
  auto out = x.detach();
  auto o = out.values();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) o[static_cast<std::size_t>(i) * d + j] *= w[i];
  if (!tape.tracking({&x})) {
    tape.check_finite("scale_rows", out);
    return out;
  }
  tape.record("scale_rows", {x}, out, [x, out, w, n, d]() mutable {
    auto g = out.grad();
    auto gx = x.grad();
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < d; ++j) {
        const auto k = static_cast<std::size_t>(i) * d + j;
        gx[k] += g[k] * w[i];
      }
  });
  return out;
}

template <typename T>
Ten<T> exp(BasicTape<T>& tape, const Ten<T>& x) {
  return unary(
      tape, "exp", x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Ten<T> log(BasicTape<T>& tape, const Ten<T>& x) {
  return unary(
      tape, "log", x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <typename T>
Ten<T> gelu(BasicTape<T>& tape, const Ten<T>& x) {
  constexpr T inv_sqrt2 = T(0.70710678118654752440);
  constexpr T inv_sqrt2pi = T(0.39894228040143267794);
  return unary(
      tape, "gelu", x, [](T v) { return T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2)); },
      [](T v, T) { return T(0.5) * (T(1) + std::erf(v * inv_sqrt2)) + v * inv_sqrt2pi * std::exp(T(-0.5) * v * v); });
}

template <typename T>
Ten<T> softmax_rows(BasicTape<T>& tape, const Ten<T>& x) {
  const int n = x.rows(), d = x.cols();
  auto out = Ten<T>::zeros(x.shape());
  auto xv = x.values();
  auto yv = out.values();
  for (int i = 0; i < n; ++i) {
    const T* xr = xv.data() + static_cast<std::size_t>(i) * d;
    T* yr = yv.data() + static_cast<std::size_t>(i) * d;
    const T mx = *std::max_element(xr, xr + d);
    T s = 0;
    for (int j = 0; j < d; ++j) s += (yr[j] = std::exp(xr[j] - mx));
    for (int j = 0; j < d; ++j) yr[j] /= s;
  }
  if (!tape.tracking({&x})) {
    tape.check_finite("softmax_rows", out);
    return out;
  }
  tape.record("softmax_rows", {x}, out, [x, out, n, d]() mutable {
    auto g = out.grad();
    auto gx = x.grad();
    auto y = out.values();
    for (int i = 0; i < n; ++i) {
      const auto off = static_cast<std::size_t>(i) * d;
      T dot = 0;
      for (int j = 0; j < d; ++j) dot += g[off + j] * y[off + j];
      for (int j = 0; j < d; ++j) gx[off + j] += y[off + j] * (g[off + j] - dot);
    }
  });
  return out;
}

template <typename T>
Ten<T> log_softmax_rows(BasicTape<T>& tape, const Ten<T>& x) {
  const int n = x.rows(), d = x.cols();
  auto out = Ten<T>::zeros(x.shape());
  auto xv = x.values();
  auto yv = out.values();
  for (int i = 0; i < n; ++i) {
    const T* xr = xv.data() + static_cast<std::size_t>(i) * d;
    T* yr = yv.data() + static_cast<std::size_t>(i) * d;
    const T mx = *std::max_element(xr, xr + d);
    T s = 0;
    for (int j = 0; j < d; ++j) s += std::exp(xr[j] - mx);
    const T lse = mx + std::log(s);
    for (int j = 0; j < d; ++j) yr[j] = xr[j] - lse;
  }
  if (!tape.tracking({&x})) {
    tape.check_finite("log_softmax_rows", out);
    return out;
  }
  tape.record("log_softmax_rows", {x}, out, [x, out, n, d]() mutable {
    auto g = out.grad();
    auto gx = x.grad();
    auto y = out.values();
    for (int i = 0; i < n; ++i) {
      const auto off = static_cast<std::size_t>(i) * d;
      T gs = 0;
      for (int j = 0; j < d; ++j) gs += g[off + j];
      for (int j = 0; j < d; ++j) gx[off + j] += g[off + j] - std::exp(y[off + j]) * gs;
    }
  });
  return out;
}

template <typename T>
Ten<T> layer_norm(BasicTape<T>& tape, const Ten<T>& x, const Ten<T>& gamma, const Ten<T>& beta, T eps) {
  const int n = x.rows(), d = x.cols();
  if (gamma.numel() != d || beta.numel() != d) throw ShapeError("layer_norm: gain/bias size mismatch");
  auto out = Ten<T>::zeros(x.shape());
  std::vector<T> xhat(static_cast<std::size_t>(n) * d);
  std::vector<T> inv_std(static_cast<std::size_t>(n));
  auto xv = x.values();
  auto yv = out.values();
  auto gv = gamma.values();
  auto bv = beta.values();
  for (int i = 0; i < n; ++i) {
    const auto off = static_cast<std::size_t>(i) * d;
    T mu = 0;
    for (int j = 0; j < d; ++j) mu += xv[off + j];
    mu /= T(d);
    T var = 0;
    for (int j = 0; j < d; ++j) var += (xv[off + j] - mu) * (xv[off + j] - mu);
    var /= T(d);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[i] = is;
    for (int j = 0; j < d; ++j) {
      xhat[off + j] = (xv[off + j] - mu) * is;
      yv[off + j] = gv[j] * xhat[off + j] + bv[j];
    }
  }
  if (!tape.tracking({&x, &gamma, &beta})) {
    tape.check_finite("layer_norm", out);
    return out;
  }
  tape.record("layer_norm", {x, gamma, beta, },
              out, [x, gamma, beta, out, n, d, xhat = std::move(xhat), inv_std = std::move(inv_std)]() mutable {
                auto g = out.grad();
                auto gv2 = gamma.values();
                if (gamma.requires_grad() || beta.requires_grad()) {
                  auto gg = gamma.grad();
                  auto gb = beta.grad();
                  for (int i = 0; i < n; ++i)
                    for (int j = 0; j < d; ++j) {
                      const auto k = static_cast<std::size_t>(i) * d + j;
                      gg[j] += g[k] * xhat[k];
                      gb[j] += g[k];
                    }
                }
                if (x.requires_grad()) {
                  auto gx = x.grad();
                  for (int i = 0; i < n; ++i) {
                    const auto off = static_cast<std::size_t>(i) * d;
                    T m1 = 0, m2 = 0;
                    for (int j = 0; j < d; ++j) {
                      const T dxh = g[off + j] * gv2[j];
                      m1 += dxh;
                      m2 += dxh * xhat[off + j];
                    }
                    m1 /= T(d);
                    m2 /= T(d);
                    for (int j = 0; j < d; ++j) {
                      const T dxh = g[off + j] * gv2[j];
                      gx[off + j] += inv_std[i] * (dxh - m1 - xhat[off + j] * m2);
                    }
                  }
                }
              });
  return out;
}

template <typename T>
Ten<T> l2_normalize_rows(BasicTape<T>& tape, const Ten<T>& x, T eps) {
  const int n = x.rows(), d = x.cols();
  auto out = Ten<T>::zeros(x.shape());
  std::vector<T> norms(static_cast<std::size_t>(n));
  auto xv = x.values();
  auto yv = out.values();
  for (int i = 0; i < n; ++i) {
    const auto off = static_cast<std::size_t>(i) * d;
    T s = 0;
    for (int j = 0; j < d; ++j) s += xv[off + j] * xv[off + j];
    norms[i] = std::sqrt(s + eps);
    for (int j = 0; j < d; ++j) yv[off + j] = xv[off + j] / norms[i];
  }
  if (!tape.tracking({&x})) {
    tape.check_finite("l2_normalize_rows", out);
    return out;
  }
  tape.record("l2_normalize_rows", {x}, out, [x, out, n, d, norms = std::move(norms)]() mutable {
    auto g = out.grad();
    auto gx = x.grad();
    auto y = out.values();
    for (int i = 0; i < n; ++i) {
      const auto off = static_cast<std::size_t>(i) * d;
      T dot = 0;
      for (int j = 0; j < d; ++j) dot += y[off + j] * g[off + j];
      for (int j = 0; j < d; ++j) gx[off + j] += (g[off + j] - y[off + j] * dot) / norms[i];
    }
  });
  return out;
}

template <typename T>
Ten<T> sum(BasicTape<T>& tape, const Ten<T>& x) {
  T s = 0;
  for (T v : x.values()) s += v;
  auto out = Ten<T>::scalar(s);
  if (!tape.tracking({&x})) {
    tape.check_finite("sum", out);
    return out;
  }
  tape.record("sum", {x}, out, [x, out]() mutable {
    const T g = out.grad()[0];
    for (T& v : x.grad()) v += g;
  });
  return out;
}

template <typename T>
Ten<T> mean(BasicTape<T>& tape, const Ten<T>& x) {
  if (x.numel() == 0) throw ContractViolation("mean of empty tensor");
  const T inv = T(1) / T(x.numel());
  T s = 0;
  for (T v : x.values()) s += v;
  auto out = Ten<T>::scalar(s * inv);
  if (!tape.tracking({&x})) {
    tape.check_finite("mean", out);
    return out;
  }
  tape.record("mean", {x}, out, [x, out, inv]() mutable {
    const T g = out.grad()[0] * inv;
    for (T& v : x.grad()) v += g;
  });
  return out;
}

template <typename T>
Ten<T> weighted_sum(BasicTape<T>& tape, const Ten<T>& x, const std::vector<T>& w) {
  if (static_cast<std::int64_t>(w.size()) != x.numel()) throw ShapeError("weighted_sum: weight count mismatch");
  T s = 0;
  auto xv = x.values();
  for (std::size_t i = 0; i < w.size(); ++i) s += w[i] * xv[i];
  auto out = Ten<T>::scalar(s);
  if (!tape.tracking({&x})) {
    tape.check_finite("weighted_sum", out);
    return out;
  }
  tape.record("weighted_sum", {x}, out, [x, out, w]() mutable {
    const T g = out.grad()[0];
    auto gx = x.grad();
    for (std::size_t i = 0; i < w.size(); ++i) gx[i] += g * w[i];
  });
  return out;
}

template <typename T>
Ten<T> mean_rows(BasicTape<T>& tape, const Ten<T>& x) {
  const int n = x.rows(), d = x.cols();
  if (n == 0) throw ContractViolation("mean_rows of empty tensor");
  auto out = Ten<T>::zeros({1, d});
  auto xv = x.values();
  auto o = out.values();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) o[j] += xv[static_cast<std::size_t>(i) * d + j];
  for (int j = 0; j < d; ++j) o[j] /= T(n);
  if (!tape.tracking({&x})) {
    tape.check_finite("mean_rows", out);
    return out;
  }
  tape.record("mean_rows", {x}, out, [x, out, n, d]() mutable {
    auto g = out.grad();
    auto gx = x.grad();
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < d; ++j) gx[static_cast<std::size_t>(i) * d + j] += g[j] / T(n);
  });
  return out;
}

template <typename T>
Ten<T> add_n(BasicTape<T>& tape, const std::vector<Ten<T>>& xs) {
  T s = 0;
  bool track = false;
  for (const auto& x : xs) {
    if (x.numel() != 1) throw ShapeError("add_n: inputs must be scalars");
    s += x.values()[0];
    track = track || tape.tracking({&x});
  }
  auto out = Ten<T>::scalar(s);
  if (!track) {
    tape.check_finite("add_n", out);
    return out;
  }
  tape.record("add_n", xs, out, [xs, out]() mutable {
    const T g = out.grad()[0];
    for (auto& x : xs)
      if (x.requires_grad()) x.grad()[0] += g;
  });
  return out;
}

template <typename T>
Ten<T> slice_cols(BasicTape<T>& tape, const Ten<T>& x, int start, int len) {
  const int n = x.rows(), d = x.cols();
  if (start < 0 || len < 0 || start + len > d) throw ShapeError("slice_cols: range out of bounds");
  auto out = Ten<T>::zeros({n, len});
  auto xv = x.values();
  auto o = out.values();
  for (int i = 0; i < n; ++i)
    std::copy_n(xv.data() + static_cast<std::size_t>(i) * d + start, len, o.data() + static_cast<std::size_t>(i) * len);
  if (!tape.tracking({&x})) return out;
  tape.record("slice_cols", {x}, out, [x, out, n, d, start, len]() mutable {
    auto g = out.grad();
    auto gx = x.grad();
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < len; ++j) gx[static_cast<std::size_t>(i) * d + start + j] += g[static_cast<std::size_t>(i) * len + j];
  });
  return out;
}

template <typename T>
Ten<T> concat_cols(BasicTape<T>& tape, const std::vector<Ten<T>>& xs) {
  if (xs.empty()) throw ContractViolation("concat_cols: no inputs");
  const int n = xs[0].rows();
  int total = 0;
  bool track = false;
  for (const auto& x : xs) {
    if (x.rows() != n) throw ShapeError("concat_cols: row count mismatch");
    total += x.cols();
    track = track || tape.tracking({&x});
  }
  auto out = Ten<T>::zeros({n, total});
  auto o = out.values();
  int off = 0;
  for (const auto& x : xs) {
    const int c = x.cols();
    auto xv = x.values();
    for (int i = 0; i < n; ++i)
      std::copy_n(xv.data() + static_cast<std::size_t>(i) * c, c, o.data() + static_cast<std::size_t>(i) * total + off);
    off += c;
  }
  if (!track) return out;
  tape.record("concat_cols", xs, out, [xs, out, n, total]() mutable {
    auto g = out.grad();
    int off2 = 0;
    for (auto& x : xs) {
      const int c = x.cols();
      if (x.requires_grad()) {
        auto gx = x.grad();
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < c; ++j) gx[static_cast<std::size_t>(i) * c + j] += g[static_cast<std::size_t>(i) * total + off2 + j];
      }
      off2 += c;
    }
  });
  return out;
}

template <typename T>
Ten<T> concat_rows(BasicTape<T>& tape, const std::vector<Ten<T>>& xs) {
  if (xs.empty()) throw ContractViolation("concat_rows: no inputs");
  const int d = xs[0].cols();
  int total = 0;
  bool track = false;
  for (const auto& x : xs) {
    if (x.cols() != d) throw ShapeError("concat_rows: column count mismatch");
    total += x.rows();
    track = track || tape.tracking({&x});
  }
  std::vector<T> values;
  values.reserve(static_cast<std::size_t>(total) * d);
  for (const auto& x : xs) values.insert(values.end(), x.values().begin(), x.values().end());
  auto out = Ten<T>::from({total, d}, std::move(values));
  if (!track) return out;
  tape.record("concat_rows", xs, out, [xs, out]() mutable {
    auto g = out.grad();
    std::size_t off = 0;
    for (auto& x : xs) {
      const auto cnt = static_cast<std::size_t>(x.numel());
      if (x.requires_grad()) {
        auto gx = x.grad();
        for (std::size_t k = 0; k < cnt; ++k) gx[k] += g[off + k];
      }
      off += cnt;
    }
  });
  return out;
}

template <typename T>
Ten<T> gather_rows(BasicTape<T>& tape, const Ten<T>& table, const std::vector<int>& ids) {
  const int v = table.rows(), d = table.cols();
  const int n = static_cast<int>(ids.size());
  auto out = Ten<T>::zeros({n, d});
  auto tv = table.values();
  auto o = out.values();
  for (int i = 0; i < n; ++i) {
    if (ids[i] < 0 || ids[i] >= v) throw ContractViolation("gather_rows: index out of range");
    std::copy_n(tv.data() + static_cast<std::size_t>(ids[i]) * d, d, o.data() + static_cast<std::size_t>(i) * d);
  }
  if (!tape.tracking({&table})) return out;
  tape.record("gather_rows", {table}, out, [table, out, ids, d]() mutable {
    auto g = out.grad();
    auto gt = table.grad();
    for (std::size_t i = 0; i < ids.size(); ++i)
      for (int j = 0; j < d; ++j) gt[static_cast<std::size_t>(ids[i]) * d + j] += g[i * d + j];
  });
  return out;
}

template <typename T>
Ten<T> gather_per_row(BasicTape<T>& tape, const Ten<T>& x, const std::vector<int>& idx, int k) {
  const int n = x.rows(), d = x.cols();
  if (static_cast<std::int64_t>(idx.size()) != static_cast<std::int64_t>(n) * k)
    throw ShapeError("gather_per_row: index grid does not match rows");
  auto out = Ten<T>::zeros({n, k});
  auto xv = x.values();
  auto o = out.values();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < k; ++j) {
      const int c = idx[static_cast<std::size_t>(i) * k + j];
      if (c < 0 || c >= d) throw ContractViolation("gather_per_row: column out of range");
      o[static_cast<std::size_t>(i) * k + j] = xv[static_cast<std::size_t>(i) * d + c];
    }
  if (!tape.tracking({&x})) return out;
  tape.record("gather_per_row", {x}, out, [x, out, idx, n, d, k]() mutable {
    auto g = out.grad();
    auto gx = x.grad();
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < k; ++j)
        gx[static_cast<std::size_t>(i) * d + idx[static_cast<std::size_t>(i) * k + j]] += g[static_cast<std::size_t>(i) * k + j];
  });
  return out;
}

template <typename T>
Ten<T> mask_rows(BasicTape<T>& tape, const Ten<T>& x, const std::vector<bool>& mask, const Ten<T>& m) {
  const int n = x.rows(), d = x.cols();
  if (static_cast<int>(mask.size()) != n)
    throw ContractViolation("mask_rows: mask length " + std::to_string(mask.size()) + " != rows " + std::to_string(n));
  if (m.numel() != d) throw ShapeError("mask_rows: mask embedding size mismatch");
  auto out = x.detach();
  auto o = out.values();
  auto mv = m.values();
  for (int i = 0; i < n; ++i)
    if (mask[i]) std::copy_n(mv.data(), d, o.data() + static_cast<std::size_t>(i) * d);
  if (!tape.tracking({&x, &m})) return out;
  tape.record("mask_rows", {x, m}, out, [x, m, out, mask, n, d]() mutable {
    auto g = out.grad();
    if (x.requires_grad()) {
      auto gx = x.grad();
      for (int i = 0; i < n; ++i)
        if (!mask[i])
          for (int j = 0; j < d; ++j) gx[static_cast<std::size_t>(i) * d + j] += g[static_cast<std::size_t>(i) * d + j];
    }
    if (m.requires_grad()) {
      auto gm = m.grad();
      for (int i = 0; i < n; ++i)
        if (mask[i])
          for (int j = 0; j < d; ++j) gm[j] += g[static_cast<std::size_t>(i) * d + j];
    }
  });
  return out;
}

template <typename T>
Ten<T> cross_entropy_rows(BasicTape<T>& tape, const Ten<T>& logits, const std::vector<int>& targets) {
  const int n = logits.rows(), k = logits.cols();
  if (static_cast<int>(targets.size()) != n) throw ShapeError("cross_entropy_rows: target count mismatch");
  auto out = Ten<T>::zeros({n});
  std::vector<T> probs(static_cast<std::size_t>(n) * k);
  auto lv = logits.values();
  auto o = out.values();
  for (int i = 0; i < n; ++i) {
    if (targets[i] < 0 || targets[i] >= k) throw ContractViolation("cross_entropy_rows: target out of range");
    const T* r = lv.data() + static_cast<std::size_t>(i) * k;
    const T mx = *std::max_element(r, r + k);
    T s = 0;
    for (int j = 0; j < k; ++j) s += (probs[static_cast<std::size_t>(i) * k + j] = std::exp(r[j] - mx));
    for (int j = 0; j < k; ++j) probs[static_cast<std::size_t>(i) * k + j] /= s;
    o[i] = mx + std::log(s) - r[targets[i]];
  }
  if (!tape.tracking({&logits})) {
    tape.check_finite("cross_entropy_rows", out);
    return out;
  }
  tape.record("cross_entropy_rows", {logits}, out, [logits, out, targets, n, k, probs = std::move(probs)]() mutable {
    auto g = out.grad();
    auto gl = logits.grad();
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < k; ++j) {
        const auto idx = static_cast<std::size_t>(i) * k + j;
        gl[idx] += g[i] * (probs[idx] - (j == targets[i] ? T(1) : T(0)));
      }
  });
  return out;
}

template <typename T>
Ten<T> entropy(BasicTape<T>& tape, const Ten<T>& p) {
  T h = 0;
  for (T v : p.values()) {
    if (v < T(0)) throw ContractViolation("entropy: negative probability");
    if (v > T(0)) h -= v * std::log(v);
  }
  auto out = Ten<T>::scalar(h);
  if (!tape.tracking({&p})) {
    tape.check_finite("entropy", out);
    return out;
  }
  tape.record("entropy", {p}, out, [p, out]() mutable {
    const T g = out.grad()[0];
    auto gp = p.grad();
    auto pv = p.values();
    const T tiny = std::numeric_limits<T>::min();
    for (std::size_t i = 0; i < pv.size(); ++i) gp[i] += -g * (std::log(std::max(pv[i], tiny)) + T(1));
  });
  return out;
}

template <typename T>
Ten<T> straight_through(BasicTape<T>& tape, const Ten<T>& hard, const Ten<T>& soft) {
  require_same_shape(hard, soft, "straight_through");
  auto out = hard.detach();
  if (!tape.tracking({&soft})) return out;
  tape.record("straight_through", {soft}, out, [soft, out]() mutable {
    auto g = out.grad();
    auto gs = soft.grad();
    for (std::size_t i = 0; i < g.size(); ++i) gs[i] += g[i];
  });
  return out;
}

template <typename T>
Ten<T> conv2d(BasicTape<T>& tape, const Ten<T>& x, const Ten<T>& weight, const Ten<T>& bias, int stride, int pad) {
  require_rank(x, 3, "conv2d");
  require_rank(weight, 4, "conv2d");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int o = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  if (weight.dim(1) != c) throw ShapeError("conv2d: channel mismatch " + shape_str(x.shape()) + " vs " + shape_str(weight.shape()));
  if (bias.numel() != o) throw ShapeError("conv2d: bias size mismatch");
  if (stride < 1 || pad < 0) throw ContractViolation("conv2d: invalid stride/padding");
  const int ho = (h + 2 * pad - kh) / stride + 1;
  const int wo = (w + 2 * pad - kw) / stride + 1;
  if (ho <= 0 || wo <= 0) throw LengthError("conv2d: input " + shape_str(x.shape()) + " smaller than kernel");
  const int kdim = c * kh * kw;
  const int npos = ho * wo;
  // im2col: [kdim, npos]
  auto cols = std::make_shared<std::vector<T>>(static_cast<std::size_t>(kdim) * npos, T(0));
  auto xv = x.values();
  for (int ci = 0; ci < c; ++ci)
    for (int a = 0; a < kh; ++a)
      for (int b = 0; b < kw; ++b) {
        T* row = cols->data() + static_cast<std::size_t>((ci * kh + a) * kw + b) * npos;
        for (int i = 0; i < ho; ++i) {
          const int hi = i * stride - pad + a;
          if (hi < 0 || hi >= h) continue;
          const T* xr = xv.data() + (static_cast<std::size_t>(ci) * h + hi) * w;
          for (int j = 0; j < wo; ++j) {
            const int wj = j * stride - pad + b;
            if (wj >= 0 && wj < w) row[i * wo + j] = xr[wj];
          }
        }
      }
  auto out = Ten<T>::zeros({o, ho, wo});
  {
    auto W = cmat<T>(weight.values(), o, kdim);
    auto X = Eigen::Map<const MatR<T>>(cols->data(), kdim, npos);
    auto Y = mat<T>(out.values(), o, npos);
    Y.noalias() = W * X;
    auto bv = bias.values();
    for (int oi = 0; oi < o; ++oi) Y.row(oi).array() += bv[oi];
  }
  if (!tape.tracking({&x, &weight, &bias})) {
    tape.check_finite("conv2d", out);
    return out;
  }
  tape.record("conv2d", {x, weight, bias}, out,
              [x, weight, bias, out, cols, c, h, w, o, kh, kw, ho, wo, kdim, npos, stride, pad]() mutable {
                auto dY = cmat<T>(std::span<const T>(out.grad()), o, npos);
                auto X = Eigen::Map<const MatR<T>>(cols->data(), kdim, npos);
                if (weight.requires_grad()) {
                  auto dW = mat<T>(weight.grad(), o, kdim);
                  dW.noalias() += dY * X.transpose();
                }
                if (bias.requires_grad()) {
                  auto gb = bias.grad();
                  for (int oi = 0; oi < o; ++oi) gb[oi] += dY.row(oi).sum();
                }
                if (x.requires_grad()) {
                  auto W = cmat<T>(weight.values(), o, kdim);
                  MatR<T> dcols = W.transpose() * dY;
                  auto gx = x.grad();
                  for (int ci = 0; ci < c; ++ci)
                    for (int a = 0; a < kh; ++a)
                      for (int b = 0; b < kw; ++b) {
                        const T* row = dcols.data() + static_cast<std::size_t>((ci * kh + a) * kw + b) * npos;
                        for (int i = 0; i < ho; ++i) {
                          const int hi = i * stride - pad + a;
                          if (hi < 0 || hi >= h) continue;
                          T* gr = gx.data() + (static_cast<std::size_t>(ci) * h + hi) * w;
                          for (int j = 0; j < wo; ++j) {
                            const int wj = j * stride - pad + b;
                            if (wj >= 0 && wj < w) gr[wj] += row[i * wo + j];
                          }
                        }
                      }
                }
              });
  return out;
}

template <typename T>
Ten<T> flatten_channels(BasicTape<T>& tape, const Ten<T>& x) {
  require_rank(x, 3, "flatten_channels");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  auto out = Ten<T>::zeros({h, c * w});
  auto xv = x.values();
  auto o = out.values();
  for (int ci = 0; ci < c; ++ci)
    for (int hi = 0; hi < h; ++hi)
      std::copy_n(xv.data() + (static_cast<std::size_t>(ci) * h + hi) * w, w,
                  o.data() + static_cast<std::size_t>(hi) * c * w + static_cast<std::size_t>(ci) * w);
  if (!tape.tracking({&x})) return out;
  tape.record("flatten_channels", {x}, out, [x, out, c, h, w]() mutable {
    auto g = out.grad();
    auto gx = x.grad();
    for (int ci = 0; ci < c; ++ci)
      for (int hi = 0; hi < h; ++hi)
        for (int wi = 0; wi < w; ++wi)
          gx[(static_cast<std::size_t>(ci) * h + hi) * w + wi] +=
              g[static_cast<std::size_t>(hi) * c * w + static_cast<std::size_t>(ci) * w + wi];
  });
  return out;
}

template <typename T>
Ten<T> depthwise_conv1d(BasicTape<T>& tape, const Ten<T>& x, const Ten<T>& weight, const Ten<T>& bias) {
  const int t = x.rows(), d = x.cols();
  require_rank(weight, 2, "depthwise_conv1d");
  const int k = weight.dim(1);
  if (weight.dim(0) != d || bias.numel() != d) throw ShapeError("depthwise_conv1d: channel mismatch");
  if (k % 2 == 0) throw ContractViolation("depthwise_conv1d: kernel size must be odd");
  const int half = k / 2;
  auto out = Ten<T>::zeros(x.shape());
  auto xv = x.values();
  auto wv = weight.values();
  auto bv = bias.values();
  auto o = out.values();
  for (int ti = 0; ti < t; ++ti) {
    T* orow = o.data() + static_cast<std::size_t>(ti) * d;
    for (int j = 0; j < d; ++j) orow[j] = bv[j];
    for (int a = 0; a < k; ++a) {
      const int src = ti + a - half;
      if (src < 0 || src >= t) continue;
      const T* xr = xv.data() + static_cast<std::size_t>(src) * d;
      for (int j = 0; j < d; ++j) orow[j] += wv[static_cast<std::size_t>(j) * k + a] * xr[j];
    }
  }
  if (!tape.tracking({&x, &weight, &bias})) {
    tape.check_finite("depthwise_conv1d", out);
    return out;
  }
  tape.record("depthwise_conv1d", {x, weight, bias}, out, [x, weight, bias, out, t, d, k, half]() mutable {
    auto g = out.grad();
    auto xv2 = x.values();
    auto wv2 = weight.values();
    if (bias.requires_grad()) {
      auto gb = bias.grad();
      for (int ti = 0; ti < t; ++ti)
        for (int j = 0; j < d; ++j) gb[j] += g[static_cast<std::size_t>(ti) * d + j];
    }
    const bool gw_on = weight.requires_grad();
    const bool gx_on = x.requires_grad();
    std::span<T> gw, gx;
    if (gw_on) gw = weight.grad();
    if (gx_on) gx = x.grad();
    for (int ti = 0; ti < t; ++ti) {
      const T* grow = g.data() + static_cast<std::size_t>(ti) * d;
      for (int a = 0; a < k; ++a) {
        const int src = ti + a - half;
        if (src < 0 || src >= t) continue;
        const auto soff = static_cast<std::size_t>(src) * d;
        for (int j = 0; j < d; ++j) {
          if (gw_on) gw[static_cast<std::size_t>(j) * k + a] += grow[j] * xv2[soff + j];
          if (gx_on) gx[soff + j] += grow[j] * wv2[static_cast<std::size_t>(j) * k + a];
        }
      }
    }
  });
  return out;
}

template <typename T>
Ten<T> dropout(BasicTape<T>& tape, const Ten<T>& x, double p, Rng& rng) {
  if (p < 0.0 || p >= 1.0) throw ContractViolation("dropout: p must be in [0, 1)");
  if (p == 0.0) return x;
  std::vector<T> keep(static_cast<std::size_t>(x.numel()));
  const T scale = T(1.0 / (1.0 - p));
  for (auto& k : keep) k = rng.uniform() >= p ? scale : T(0);
  auto out = x.detach();
  auto o = out.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= keep[i];
  if (!tape.tracking({&x})) return out;
  tape.record("dropout", {x}, out, [x, out, keep = std::move(keep)]() mutable {
    auto g = out.grad();
    auto gx = x.grad();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * keep[i];
  });
  return out;
}

#define ATM_INSTANTIATE_OPS(T)                                                                            \
  template Ten<T> matmul(BasicTape<T>&, const Ten<T>&, const Ten<T>&, bool, bool);                        \
  template Ten<T> add(BasicTape<T>&, const Ten<T>&, const Ten<T>&);                                       \
  template Ten<T> sub(BasicTape<T>&, const Ten<T>&, const Ten<T>&);                                       \
  template Ten<T> mul(BasicTape<T>&, const Ten<T>&, const Ten<T>&);                                       \
  template Ten<T> add_row(BasicTape<T>&, const Ten<T>&, const Ten<T>&);                                   \
  template Ten<T> affine(BasicTape<T>&, const Ten<T>&, T, T);                                             \
  template Ten<T> scale_rows(BasicTape<T>&, const Ten<T>&, const std::vector<T>&);                        \
  template Ten<T> exp(BasicTape<T>&, const Ten<T>&);                                                      \
  template Ten<T> log(BasicTape<T>&, const Ten<T>&);                                                      \
  template Ten<T> gelu(BasicTape<T>&, const Ten<T>&);                                                     \
  template Ten<T> softmax_rows(BasicTape<T>&, const Ten<T>&);                                             \
  template Ten<T> log_softmax_rows(BasicTape<T>&, const Ten<T>&);                                         \
  template Ten<T> layer_norm(BasicTape<T>&, const Ten<T>&, const Ten<T>&, const Ten<T>&, T);              \
  template Ten<T> l2_normalize_rows(BasicTape<T>&, const Ten<T>&, T);                                     \
  template Ten<T> sum(BasicTape<T>&, const Ten<T>&);                                                      \
  template Ten<T> mean(BasicTape<T>&, const Ten<T>&);                                                     \
  template Ten<T> mean_rows(BasicTape<T>&, const Ten<T>&);                                                \
  template Ten<T> weighted_sum(BasicTape<T>&, const Ten<T>&, const std::vector<T>&);                      \
  template Ten<T> add_n(BasicTape<T>&, const std::vector<Ten<T>>&);                                       \
  template Ten<T> slice_cols(BasicTape<T>&, const Ten<T>&, int, int);                                     \
  template Ten<T> concat_cols(BasicTape<T>&, const std::vector<Ten<T>>&);                                 \
  template Ten<T> concat_rows(BasicTape<T>&, const std::vector<Ten<T>>&);                                 \
  template Ten<T> gather_rows(BasicTape<T>&, const Ten<T>&, const std::vector<int>&);                     \
  template Ten<T> gather_per_row(BasicTape<T>&, const Ten<T>&, const std::vector<int>&, int);             \
  template Ten<T> mask_rows(BasicTape<T>&, const Ten<T>&, const std::vector<bool>&, const Ten<T>&);       \
  template Ten<T> cross_entropy_rows(BasicTape<T>&, const Ten<T>&, const std::vector<int>&);              \
  template Ten<T> entropy(BasicTape<T>&, const Ten<T>&);                                                  \
  template Ten<T> straight_through(BasicTape<T>&, const Ten<T>&, const Ten<T>&);                          \
  template Ten<T> conv2d(BasicTape<T>&, const Ten<T>&, const Ten<T>&, const Ten<T>&, int, int);           \
  template Ten<T> flatten_channels(BasicTape<T>&, const Ten<T>&);                                         \
  template Ten<T> depthwise_conv1d(BasicTape<T>&, const Ten<T>&, const Ten<T>&, const Ten<T>&);           \
  template Ten<T> dropout(BasicTape<T>&, const Ten<T>&, double, Rng&);

ATM_INSTANTIATE_OPS(float)
ATM_INSTANTIATE_OPS(double)

#undef ATM_INSTANTIATE_OPS

}  // namespace atm::nn::ops
