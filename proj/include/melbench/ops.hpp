// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "melbench/rng.hpp"
#include "melbench/tensor.hpp"

namespace melbench {

// Linear algebra ----------------------------------------------------------

/// a: [..., m, k], b: [k, n] -> [..., m, n]. Leading axes of `a` are folded
/// into the row dimension.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// Batched product. a: [B, m, k]; b: [B, k, n], or [B, n, k] with transpose_b.
template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b = false);

/// Swaps the last two axes.
template <typename T>
Tensor<T> transpose(const Tensor<T>& a);

// Elementwise ---------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);

/// x + y where y's shape equals the trailing axes of x (bias, positional table).
template <typename T>
Tensor<T> add_broadcast(const Tensor<T>& x, const Tensor<T>& y);

/// Exact erf form: x * Phi(x).
template <typename T>
Tensor<T> gelu(const Tensor<T>& x);

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis);

// Shape ---------------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);
/// [B, ...] -> [B, prod(...)]
template <typename T>
Tensor<T> flatten(const Tensor<T>& x);
template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis);
/// Contiguous slice [start, start+length) along `axis`.
template <typename T>
Tensor<T> narrow(const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t length);
/// Tiles x along a new leading axis of extent `batch`.
template <typename T>
Tensor<T> repeat_batch(const Tensor<T>& x, std::size_t batch);

// Reductions ----------------------------------------------------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& x);
template <typename T>
Tensor<T> mean(const Tensor<T>& x);

// Neural-network layers -----------------------------------------------------

/// x: [B, C, H, W], w: [F, C, kh, kw], bias: [F]; stride 1, symmetric zero padding.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, std::size_t pad);

/// Non-overlapping k x k windows over the last two axes; remainder dropped.
/// Ties go to the first index in row-major window order.
template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x, std::size_t k);

template <typename T>
struct RunningStats {
  Tensor<T> mean;
  Tensor<T> var;
};

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

/// Normalizes over every axis except axis 1 (channels). Training mode uses
/// batch statistics and updates `stats` in place; eval mode uses `stats`.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     RunningStats<T>& stats, bool training);

/// Normalizes over the last axis.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     double eps = 1e-5);

/// Inverted dropout: survivors are scaled by 1/(1-p) in training mode.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, Rng& rng, bool training);

// Losses ----------------------------------------------------------------------

/// Mean softmax cross-entropy. logits: [B, C].
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels);

/// Mean sigmoid binary cross-entropy on a single logit. logits: [B, 1] or [B].
template <typename T>
Tensor<T> bce_with_logits(const Tensor<T>& logits, std::span<const int> labels);

}  // namespace melbench
