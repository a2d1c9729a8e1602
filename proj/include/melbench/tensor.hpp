// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace melbench {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

namespace detail {

template <typename T>
struct Node;

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::shared_ptr<Node<T>> node;  // null for leaves

  std::vector<T>& grad_buffer() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    return grad;
  }
};

template <typename T>
struct Node {
  const char* op = "";
  // Only inputs that require grad are recorded; they keep the graph alive.
  std::vector<std::shared_ptr<TensorImpl<T>>> inputs;
  std::function<void(std::span<const T> out_grad)> backward;
};

}  // namespace detail

/// Whether ops record a tape. Thread-local; disabled inside NoGradGuard.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Dense row-major tensor. Copies share storage (handle semantics), which is
/// what lets parameters be held by layers and updated in place by optimizers.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor();
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> values);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor scalar(T value) { return Tensor(Shape{1}, std::vector<T>{value}); }

  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return impl_->data.size(); }
  bool defined() const { return impl_ != nullptr; }

  std::span<const T> data() const { return impl_->data; }
  /// Writable view of the values. Intended for leaves (parameters, inputs);
  /// writing into a taped intermediate invalidates its backward pass.
  std::span<T> mutable_data() { return impl_->data; }
  T item() const;
  T at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const { return impl_->requires_grad; }
  /// Only leaves may change their flag.
  Tensor& set_requires_grad(bool flag);
  bool is_leaf() const { return impl_->node == nullptr; }
  bool has_grad() const { return impl_->grad.size() == impl_->data.size() && !impl_->data.empty(); }
  std::span<const T> grad() const { return impl_->grad; }
  std::span<T> mutable_grad() { return impl_->grad_buffer(); }
  void zero_grad();

  /// Same values, no tape, no grad flag.
  Tensor detach() const;
  /// Deep copy of values into a fresh leaf with the same grad flag.
  Tensor clone() const;

  void backward() const;

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }
  const std::shared_ptr<detail::TensorImpl<T>>& impl() const { return impl_; }

 private:
  std::shared_ptr<detail::TensorImpl<T>> impl_;
};

/// Reverse-mode sweep from a scalar loss. Leaf gradients accumulate across
/// calls; intermediate gradients are reset at the start of every sweep.
template <typename T>
void backward(const Tensor<T>& loss);

namespace detail {

/// Attaches a backward closure to `out` when any of `inputs` needs grad and
/// the tape is enabled. Returns false when nothing was recorded.
template <typename T>
bool record(Tensor<T>& out, const char* op, std::initializer_list<const Tensor<T>*> inputs,
            std::function<void(std::span<const T>)> fn);

template <typename T>
bool record(Tensor<T>& out, const char* op, const std::vector<Tensor<T>>& inputs,
            std::function<void(std::span<const T>)> fn);

template <typename T>
bool needs_grad(std::initializer_list<const Tensor<T>*> inputs);

}  // namespace detail

}  // namespace melbench
