// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "melbench/checkpoint.hpp"
#include "melbench/ops.hpp"
#include "melbench/rng.hpp"
#include "melbench/tensor.hpp"

namespace melbench {

/// Per-forward state: train/eval switch and the stream dropout draws from.
struct ForwardContext {
  bool training = false;
  Rng* rng = nullptr;
};

template <typename T>
Tensor<T> apply_dropout(const Tensor<T>& x, double p, ForwardContext& ctx);

/// Ordered registry of named tensors. Trainable entries are leaves with
/// requires_grad set; buffers (batch-norm running statistics) are not.
template <typename T>
class ParameterSet {
 public:
  struct Entry {
    std::string name;
    Tensor<T> tensor;
    bool trainable = true;
  };

  Tensor<T> add(std::string name, Tensor<T> value, bool trainable = true);

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Tensor<T>> trainable() const;
  Tensor<T> get(std::string_view name) const;
  /// Number of trainable scalars.
  std::size_t parameter_count() const;
  void zero_grad();

  Checkpoint to_checkpoint() const;
  /// Copies values from a checkpoint; every entry must be present with its shape.
  void load(const Checkpoint& ckpt);

  std::vector<std::vector<T>> snapshot() const;
  void restore(const std::vector<std::vector<T>>& values);

 private:
  std::vector<Entry> entries_;
};

/// U(-b, b) with b = sqrt(6 / fan_in).
template <typename T>
Tensor<T> kaiming_uniform(Shape shape, std::size_t fan_in, Rng& rng);
template <typename T>
Tensor<T> normal_init(Shape shape, double stddev, Rng& rng);

template <typename T>
struct Linear {
  Tensor<T> weight;  // [in, out]
  Tensor<T> bias;    // [out], undefined when built without bias

  Linear() = default;
  Linear(ParameterSet<T>& params, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
         bool with_bias = true);
  Tensor<T> operator()(const Tensor<T>& x) const;
};

template <typename T>
struct Conv2d {
  Tensor<T> weight;  // [F, C, k, k]
  Tensor<T> bias;    // [F]
  std::size_t pad = 0;

  Conv2d() = default;
  Conv2d(ParameterSet<T>& params, const std::string& name, std::size_t in_channels,
         std::size_t filters, std::size_t kernel, std::size_t pad, Rng& rng);
  Tensor<T> operator()(const Tensor<T>& x) const;
};

template <typename T>
struct BatchNorm {
  Tensor<T> gamma;
  Tensor<T> beta;
  RunningStats<T> stats;

  BatchNorm() = default;
  BatchNorm(ParameterSet<T>& params, const std::string& name, std::size_t channels);
  Tensor<T> operator()(const Tensor<T>& x, bool training);
};

template <typename T>
struct LayerNorm {
  Tensor<T> gamma;
  Tensor<T> beta;

  LayerNorm() = default;
  LayerNorm(ParameterSet<T>& params, const std::string& name, std::size_t features);
  Tensor<T> operator()(const Tensor<T>& x) const;
};

}  // namespace melbench
