// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <string>

#include "gradcheck.hpp"
#include "melbench/models.hpp"

namespace testsupport {

/// Tiny configurations used for finite-difference checks of whole models:
/// 32x24 input, embedding 16, 2 blocks, 2 heads.
inline melbench::ModelConfig tiny_config(melbench::Arch arch, std::size_t n_logits = 3) {
  melbench::ModelConfig c;
  c.arch = arch;
  c.n_logits = n_logits;
  c.n_mels = 32;
  c.n_frames = 24;
  c.embedding_size = 16;
  c.lat_dim = 16;
  c.mlp_dim = 32;
  c.n_heads = 2;
  c.n_blocks = 2;
  c.patch_h = 8;
  c.patch_w = 8;
  c.vpatch_width = 5;
  c.vpatch_stride = 1;
  return c;
}

struct ModelGradReport {
  GradReport grads;
  std::size_t tensors = 0;
};

/// Training-mode forward (dropout active, with a mask stream reseeded on every
/// evaluation) on a fixed random batch; the loss is a fixed random weighting of
/// the logits. Batch of four for batch-normalized models (with two, the head
/// normalization pins every feature to about +-1), one otherwise.
inline ModelGradReport check_model_gradients(melbench::Model<double>& model, std::uint64_t seed = 3,
                                             std::size_t probes = 20) {
  using namespace melbench;
  const auto& c = model.config();
  const std::size_t B = (c.arch == Arch::cnn || c.arch == Arch::ssc) ? 4 : 1;
  Rng rng(seed);
  auto input = random_tensor({B, 1, c.n_mels, c.n_frames}, rng, 0.0, 1.0);
  auto weights = random_tensor({B, c.n_logits}, rng);
  auto loss = [&] {
    Rng dropout_rng(seed + 1);
    ForwardContext ctx{true, &dropout_rng};
    return sum(mul(model.forward(input, ctx), weights));
  };
  ModelGradReport r;
  auto params = model.params().trainable();
  r.tensors = params.size();
  // The loss is O(10), so h = 1e-6 leaves ~1e-9 round-off in each difference.
  r.grads = check_gradients(loss, params, probes, 1e-5, seed + 2);
  return r;
}

}  // namespace testsupport
