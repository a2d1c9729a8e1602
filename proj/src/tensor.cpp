// SPDX-License-Identifier: Apache-2.0
#include "melbench/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace melbench {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t extent : shape) n *= extent;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {
thread_local bool g_grad_enabled = true;

void check_shape(const Shape& shape) {
  if (shape.empty()) throw std::invalid_argument("tensor shape must have at least one axis");
  for (std::size_t extent : shape) {
    if (extent == 0) {
      throw std::invalid_argument("tensor extents must be positive, got " + to_string(shape));
    }
  }
}
}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <typename T>
Tensor<T>::Tensor() = default;

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : impl_(std::make_shared<detail::TensorImpl<T>>()) {
  check_shape(shape);
  impl_->data.assign(melbench::numel(shape), fill);
  impl_->shape = std::move(shape);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values)
    : impl_(std::make_shared<detail::TensorImpl<T>>()) {
  check_shape(shape);
  if (melbench::numel(shape) != values.size()) {
    throw std::invalid_argument("tensor of shape " + to_string(shape) + " cannot hold " +
                                std::to_string(values.size()) + " values");
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw std::out_of_range("axis " + std::to_string(axis) + " out of range for shape " +
                            to_string(shape()));
  }
  return impl_->shape[axis];
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw std::invalid_argument("item() on tensor of shape " + to_string(shape()));
  return impl_->data[0];
}

template <typename T>
T Tensor<T>::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != rank()) throw std::invalid_argument("index rank mismatch");
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (std::size_t i : index) {
    if (i >= impl_->shape[axis]) throw std::out_of_range("tensor index out of range");
    flat = flat * impl_->shape[axis] + i;
    ++axis;
  }
  return impl_->data[flat];
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool flag) {
  if (!is_leaf()) throw std::logic_error("requires_grad can only be changed on leaf tensors");
  impl_->requires_grad = flag;
  return *this;
}

template <typename T>
void Tensor<T>::zero_grad() {
  if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor(impl_->shape, impl_->data);
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  Tensor copy(impl_->shape, impl_->data);
  copy.impl_->requires_grad = impl_->requires_grad;
  return copy;
}

template <typename T>
void Tensor<T>::backward() const {
  melbench::backward(*this);
}

template <typename T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw std::invalid_argument("backward() needs a scalar loss, got shape " +
                                (loss.defined() ? to_string(loss.shape()) : std::string("<undefined>")));
  }
  using Impl = detail::TensorImpl<T>;
  Impl* root = loss.impl().get();
  if (!root->requires_grad) {
    throw std::invalid_argument("backward() on a loss that does not depend on any parameter");
  }

  // Iterative post-order DFS gives a topological order (inputs before outputs).
  std::vector<Impl*> order;
  std::unordered_set<Impl*> visited;
  std::vector<std::pair<Impl*, std::size_t>> stack{{root, 0}};
  visited.insert(root);
  while (!stack.empty()) {
    auto& [impl, next] = stack.back();
    if (impl->node && next < impl->node->inputs.size()) {
      Impl* child = impl->node->inputs[next++].get();
      if (visited.insert(child).second) stack.emplace_back(child, 0);
      continue;
    }
    order.push_back(impl);
    stack.pop_back();
  }

  for (Impl* impl : order) {
    if (impl->node) impl->grad.assign(impl->data.size(), T(0));
  }
  root->grad_buffer()[0] += T(1);

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Impl* impl = *it;
    if (impl->node && impl->node->backward) impl->node->backward(impl->grad);
  }
}

namespace detail {

template <typename T>
bool needs_grad(std::initializer_list<const Tensor<T>*> inputs) {
  if (!grad_enabled()) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor<T>* t) { return t && t->defined() && t->requires_grad(); });
}

template <typename T>
bool record(Tensor<T>& out, const char* op, std::initializer_list<const Tensor<T>*> inputs,
            std::function<void(std::span<const T>)> fn) {
  if (!needs_grad<T>(inputs)) return false;
  auto node = std::make_shared<Node<T>>();
  node->op = op;
  for (const Tensor<T>* t : inputs) {
    if (t && t->defined() && t->requires_grad()) node->inputs.push_back(t->impl());
  }
  node->backward = std::move(fn);
  out.impl()->requires_grad = true;
  out.impl()->node = std::move(node);
  return true;
}

template <typename T>
bool record(Tensor<T>& out, const char* op, const std::vector<Tensor<T>>& inputs,
            std::function<void(std::span<const T>)> fn) {
  if (!grad_enabled()) return false;
  auto node = std::make_shared<Node<T>>();
  node->op = op;
  for (const Tensor<T>& t : inputs) {
    if (t.requires_grad()) node->inputs.push_back(t.impl());
  }
  if (node->inputs.empty()) return false;
  node->backward = std::move(fn);
  out.impl()->requires_grad = true;
  out.impl()->node = std::move(node);
  return true;
}

}  // namespace detail

#define MELBENCH_INSTANTIATE_TENSOR(T)                                                       \
  template class Tensor<T>;                                                                  \
  template void backward<T>(const Tensor<T>&);                                               \
  template bool detail::needs_grad<T>(std::initializer_list<const Tensor<T>*>);              \
  template bool detail::record<T>(Tensor<T>&, const char*,                                   \
                                  std::initializer_list<const Tensor<T>*>,                   \
                                  std::function<void(std::span<const T>)>);                  \
  template bool detail::record<T>(Tensor<T>&, const char*, const std::vector<Tensor<T>>&,    \
                                  std::function<void(std::span<const T>)>);

MELBENCH_INSTANTIATE_TENSOR(float)
MELBENCH_INSTANTIATE_TENSOR(double)

}  // namespace melbench
