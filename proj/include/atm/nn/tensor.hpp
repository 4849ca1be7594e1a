// Copyright 2026 The atm-msm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace atm::nn {

using Shape = std::vector<int>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename T>
struct TensorStorage {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
};

/// Dense row-major tensor handle. Copies share storage; use clone() for a
/// deep copy. Training runs on BasicTensor<float>; BasicTensor<double> exists
/// so finite-difference checks can run the same kernels without float32
/// rounding noise.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;

  static BasicTensor zeros(Shape shape, bool requires_grad = false);
  static BasicTensor full(Shape shape, T value, bool requires_grad = false);
  static BasicTensor from(Shape shape, std::vector<T> values, bool requires_grad = false);
  static BasicTensor scalar(T value, bool requires_grad = false);

  bool defined() const { return s_ != nullptr; }
  const Shape& shape() const { return s_->shape; }
  int rank() const { return static_cast<int>(s_->shape.size()); }
  int dim(int i) const { return s_->shape.at(static_cast<std::size_t>(i)); }
  std::int64_t numel() const { return static_cast<std::int64_t>(s_->value.size()); }
  // 2-D accessors; a rank-1 tensor is treated as a single row.
  int rows() const { return rank() >= 2 ? s_->shape[0] : 1; }
  int cols() const { return rank() >= 2 ? s_->shape[1] : (rank() == 1 ? s_->shape[0] : 1); }

  std::span<T> values() { return s_->value; }
  std::span<const T> values() const { return s_->value; }
  T* data() { return s_->value.data(); }
  const T* data() const { return s_->value.data(); }
  T item() const;
  T at(int r, int c) const { return s_->value[static_cast<std::size_t>(r) * cols() + c]; }

  /// Gradient buffer, allocated (zeroed) on first access. Like the values,
  /// it belongs to the shared storage, so a const handle can still write it.
  std::span<T> grad() const;
  bool has_grad() const { return !s_->grad.empty(); }
  void zero_grad();

  bool requires_grad() const { return s_->requires_grad; }
  void set_requires_grad(bool v) { s_->requires_grad = v; }

  BasicTensor clone() const;
  /// Same values, no gradient tracking.
  BasicTensor detach() const;
  bool is(const BasicTensor& o) const { return s_ == o.s_; }

 private:
  std::shared_ptr<TensorStorage<T>> s_;
};

using Tensor = BasicTensor<float>;

/// ComputationRecord: the ordered list of primitive operations executed while
/// building a loss. Node ids are positions in this list, so the record is
/// topologically ordered by construction.
template <typename T>
class BasicTape {
 public:
  using TensorT = BasicTensor<T>;

  /// Whether an op over these inputs must be recorded.
  bool tracking(std::initializer_list<const TensorT*> inputs) const;

  /// Appends an op. Checks the output for non-finite values; throws
  /// NumericError carrying the would-be node id.
  int record(const char* op, std::vector<TensorT> inputs, TensorT output, std::function<void()> backward);

  /// Checks finiteness of an untracked op output.
  void check_finite(const char* op, const TensorT& output) const;

  /// Reverse-mode sweep from a scalar loss. Gradients accumulate into every
  /// tensor reachable through the record; intermediate gradients are reset
  /// first, leaf (parameter) gradients are not.
  void backward(const TensorT& loss);

  std::size_t size() const { return nodes_.size(); }
  const char* op_name(std::size_t i) const { return nodes_.at(i).op; }
  void clear() { nodes_.clear(); }

  bool grad_enabled() const { return grad_enabled_; }
  void set_grad_enabled(bool v) { grad_enabled_ = v; }

 private:
  struct Node {
    const char* op;
    std::vector<TensorT> inputs;
    TensorT output;
    std::function<void()> backward;
  };
  std::vector<Node> nodes_;
  bool grad_enabled_ = true;
};

using Tape = BasicTape<float>;

/// Ordered, named collection of trainable tensors.
template <typename T>
class BasicParameterSet {
 public:
  struct Entry {
    std::string name;
    BasicTensor<T> tensor;
  };

  void add(std::string name, BasicTensor<T> tensor);
  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::int64_t total_numel() const;
  const BasicTensor<T>* find(const std::string& name) const;
  void zero_grad();

 private:
  std::vector<Entry> entries_;
};

using ParameterSet = BasicParameterSet<float>;

extern template class BasicTensor<float>;
extern template class BasicTensor<double>;
extern template class BasicTape<float>;
extern template class BasicTape<double>;
extern template class BasicParameterSet<float>;
extern template class BasicParameterSet<double>;

}  // namespace atm::nn
