// SPDX-License-Identifier: Apache-2.0
#include "melbench/nn.hpp"

#include <cmath>
#include <stdexcept>

#include "melbench/error.hpp"

namespace melbench {

template <typename T>
Tensor<T> apply_dropout(const Tensor<T>& x, double p, ForwardContext& ctx) {
  if (!(p >= 0.0) || p >= 1.0) {
    throw std::invalid_argument("dropout probability must be in [0, 1), got " + std::to_string(p));
  }
  if (!ctx.training || p == 0.0) return x;
  if (ctx.rng == nullptr) throw std::logic_error("training forward without a dropout rng");
  return dropout(x, p, *ctx.rng, true);
}

template <typename T>
Tensor<T> ParameterSet<T>::add(std::string name, Tensor<T> value, bool trainable) {
  for (const auto& e : entries_) {
    if (e.name == name) throw std::logic_error("duplicate parameter name " + name);
  }
  value.set_requires_grad(trainable);
  entries_.push_back({std::move(name), value, trainable});
  return value;
}

template <typename T>
std::vector<Tensor<T>> ParameterSet<T>::trainable() const {
  std::vector<Tensor<T>> out;
  for (const auto& e : entries_) {
    if (e.trainable) out.push_back(e.tensor);
  }
  return out;
}

template <typename T>
Tensor<T> ParameterSet<T>::get(std::string_view name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return e.tensor;
  }
  throw std::out_of_range("no parameter named " + std::string(name));
}

template <typename T>
std::size_t ParameterSet<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) {
    if (e.trainable) n += e.tensor.numel();
  }
  return n;
}

template <typename T>
void ParameterSet<T>::zero_grad() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

template <typename T>
Checkpoint ParameterSet<T>::to_checkpoint() const {
  Checkpoint ckpt;
  for (const auto& e : entries_) {
    NamedArray a{e.name, e.tensor.shape(), {}};
    a.values.reserve(e.tensor.numel());
    for (T v : e.tensor.data()) a.values.push_back(static_cast<float>(v));
    ckpt.arrays.push_back(std::move(a));
  }
  return ckpt;
}

template <typename T>
void ParameterSet<T>::load(const Checkpoint& ckpt) {
  for (auto& e : entries_) {
    const NamedArray* a = ckpt.find(e.name);
    if (a == nullptr) throw InputError("checkpoint is missing parameter " + e.name);
    if (a->shape != e.tensor.shape()) {
      throw InputError("checkpoint parameter " + e.name + " has shape " + to_string(a->shape) +
                       ", model expects " + to_string(e.tensor.shape()));
    }
    auto dst = e.tensor.mutable_data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(a->values[i]);
  }
}

template <typename T>
std::vector<std::vector<T>> ParameterSet<T>::snapshot() const {
  std::vector<std::vector<T>> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.emplace_back(e.tensor.data().begin(), e.tensor.data().end());
  return out;
}

template <typename T>
void ParameterSet<T>::restore(const std::vector<std::vector<T>>& values) {
  if (values.size() != entries_.size()) throw std::invalid_argument("snapshot does not match parameter set");
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto dst = entries_[i].tensor.mutable_data();
    if (dst.size() != values[i].size()) throw std::invalid_argument("snapshot does not match parameter set");
    std::copy(values[i].begin(), values[i].end(), dst.begin());
  }
}

template <typename T>
Tensor<T> kaiming_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  Tensor<T> t(std::move(shape));
  for (auto& v : t.mutable_data()) v = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

template <typename T>
Tensor<T> normal_init(Shape shape, double stddev, Rng& rng) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.mutable_data()) v = static_cast<T>(rng.normal(0.0, stddev));
  return t;
}

template <typename T>
Linear<T>::Linear(ParameterSet<T>& params, const std::string& name, std::size_t in, std::size_t out,
                  Rng& rng, bool with_bias) {
  weight = params.add(name + ".weight", kaiming_uniform<T>({in, out}, in, rng));
  if (with_bias) bias = params.add(name + ".bias", Tensor<T>(Shape{out}));
}

template <typename T>
Tensor<T> Linear<T>::operator()(const Tensor<T>& x) const {
  Tensor<T> y = matmul(x, weight);
  return bias.defined() ? add_broadcast(y, bias) : y;
}

template <typename T>
Conv2d<T>::Conv2d(ParameterSet<T>& params, const std::string& name, std::size_t in_channels,
                  std::size_t filters, std::size_t kernel, std::size_t padding, Rng& rng)
    : pad(padding) {
  weight = params.add(name + ".weight",
                      kaiming_uniform<T>({filters, in_channels, kernel, kernel},
                                         in_channels * kernel * kernel, rng));
  bias = params.add(name + ".bias", Tensor<T>(Shape{filters}));
}

template <typename T>
Tensor<T> Conv2d<T>::operator()(const Tensor<T>& x) const {
  return conv2d(x, weight, bias, pad);
}

template <typename T>
BatchNorm<T>::BatchNorm(ParameterSet<T>& params, const std::string& name, std::size_t channels) {
  gamma = params.add(name + ".gamma", Tensor<T>(Shape{channels}, T(1)));
  beta = params.add(name + ".beta", Tensor<T>(Shape{channels}));
  stats.mean = params.add(name + ".running_mean", Tensor<T>(Shape{channels}), false);
  stats.var = params.add(name + ".running_var", Tensor<T>(Shape{channels}, T(1)), false);
}

template <typename T>
Tensor<T> BatchNorm<T>::operator()(const Tensor<T>& x, bool training) {
  return batch_norm(x, gamma, beta, stats, training);
}

template <typename T>
LayerNorm<T>::LayerNorm(ParameterSet<T>& params, const std::string& name, std::size_t features) {
  gamma = params.add(name + ".gamma", Tensor<T>(Shape{features}, T(1)));
  beta = params.add(name + ".beta", Tensor<T>(Shape{features}));
}

template <typename T>
Tensor<T> LayerNorm<T>::operator()(const Tensor<T>& x) const {
  return layer_norm(x, gamma, beta);
}

#define MELBENCH_INSTANTIATE_NN(T)                                                   \
  template Tensor<T> apply_dropout(const Tensor<T>&, double, ForwardContext&);      \
  template class ParameterSet<T>;                                                    \
  template Tensor<T> kaiming_uniform<T>(Shape, std::size_t, Rng&);                   \
  template Tensor<T> normal_init<T>(Shape, double, Rng&);                            \
  template struct Linear<T>;                                                         \
  template struct Conv2d<T>;                                                         \
  template struct BatchNorm<T>;                                                      \
  template struct LayerNorm<T>;

MELBENCH_INSTANTIATE_NN(float)
MELBENCH_INSTANTIATE_NN(double)

}  // namespace melbench
