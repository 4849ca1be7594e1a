// Copyright 2026 The atm-msm Authors
// SPDX-License-Identifier: Apache-2.0

#include "atm/nn/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "atm/common/error.hpp"

namespace atm::nn {

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (int d : shape) {
    if (d < 0) throw ContractViolation("negative dimension in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

template <typename T>
BasicTensor<T> BasicTensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::full(Shape shape, T value, bool requires_grad) {
  BasicTensor t;
  t.s_ = std::make_shared<TensorStorage<T>>();
  const auto n = static_cast<std::size_t>(shape_numel(shape));
  t.s_->shape = std::move(shape);
  t.s_->value.assign(n, value);
  t.s_->requires_grad = requires_grad;
  return t;
}

template <typename T>
BasicTensor<T> BasicTensor<T>::from(Shape shape, std::vector<T> values, bool requires_grad) {
  if (shape_numel(shape) != static_cast<std::int64_t>(values.size()))
    throw ShapeError("tensor shape " + shape_str(shape) + " does not match " + std::to_string(values.size()) +
                     " values");
  BasicTensor t;
  t.s_ = std::make_shared<TensorStorage<T>>();
  t.s_->shape = std::move(shape);
  t.s_->value = std::move(values);
  t.s_->requires_grad = requires_grad;
  return t;
}

template <typename T>
BasicTensor<T> BasicTensor<T>::scalar(T value, bool requires_grad) {
  return full({1}, value, requires_grad);
}

template <typename T>
T BasicTensor<T>::item() const {
  if (numel() != 1) throw ContractViolation("item() on tensor of shape " + shape_str(shape()));
  return s_->value[0];
}

template <typename T>
std::span<T> BasicTensor<T>::grad() const {
  if (s_->grad.size() != s_->value.size()) s_->grad.assign(s_->value.size(), T(0));
  return s_->grad;
}

template <typename T>
void BasicTensor<T>::zero_grad() {
  std::fill(s_->grad.begin(), s_->grad.end(), T(0));
}

template <typename T>
BasicTensor<T> BasicTensor<T>::clone() const {
  BasicTensor t;
  t.s_ = std::make_shared<TensorStorage<T>>(*s_);
  return t;
}

template <typename T>
BasicTensor<T> BasicTensor<T>::detach() const {
  return from(s_->shape, s_->value, false);
}

template <typename T>
bool BasicTape<T>::tracking(std::initializer_list<const TensorT*> inputs) const {
  if (!grad_enabled_) return false;
  for (const TensorT* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

template <typename T>
void BasicTape<T>::check_finite(const char* op, const TensorT& output) const {
  for (T v : output.values()) {
    if (!std::isfinite(v)) throw NumericError(static_cast<int>(nodes_.size()), op, "non-finite forward value");
  }
}

template <typename T>
int BasicTape<T>::record(const char* op, std::vector<TensorT> inputs, TensorT output,
                         std::function<void()> backward) {
  check_finite(op, output);
  output.set_requires_grad(true);
  nodes_.push_back(Node{op, std::move(inputs), std::move(output), std::move(backward)});
  return static_cast<int>(nodes_.size()) - 1;
}

template <typename T>
void BasicTape<T>::backward(const TensorT& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw ContractViolation("backward: loss must be a scalar, got shape " +
                            (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  for (auto& n : nodes_) {
    if (n.output.has_grad()) n.output.zero_grad();
  }
  if (!loss.requires_grad()) return;
  auto g = loss.grad();
  g[0] += T(1);
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.output.has_grad()) continue;
    for (T v : n.output.grad()) {
      if (!std::isfinite(v)) throw NumericError(static_cast<int>(i), n.op, "non-finite gradient");
    }
    n.backward();
  }
}

template <typename T>
void BasicParameterSet<T>::add(std::string name, BasicTensor<T> tensor) {
  for (const auto& e : entries_)
    if (e.name == name) throw ContractViolation("duplicate parameter name: " + name);
  tensor.set_requires_grad(true);
  entries_.push_back(Entry{std::move(name), std::move(tensor)});
}

template <typename T>
std::int64_t BasicParameterSet<T>::total_numel() const {
  std::int64_t n = 0;
  for (const auto& e : entries_) n += e.tensor.numel();
  return n;
}

template <typename T>
const BasicTensor<T>* BasicParameterSet<T>::find(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return &e.tensor;
  return nullptr;
}

template <typename T>
void BasicParameterSet<T>::zero_grad() {
  for (auto& e : entries_) {
    e.tensor.grad();
    e.tensor.zero_grad();
  }
}

template class BasicTensor<float>;
template class BasicTensor<double>;
template class BasicTape<float>;
template class BasicTape<double>;
template class BasicParameterSet<float>;
template class BasicParameterSet<double>;

}  // namespace atm::nn
