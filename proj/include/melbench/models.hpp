// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "melbench/audio.hpp"
#include "melbench/nn.hpp"
#include "melbench/patches.hpp"

namespace melbench {

enum class Arch { cnn, ssc, vit, vvit };
enum class AttentionScale { sqrt_dk, sqrt_seq };

std::string_view to_string(Arch arch);
bool parse_arch(std::string_view text, Arch& out);
std::string_view to_string(AttentionScale scale);
bool parse_attention_scale(std::string_view text, AttentionScale& out);

struct ModelConfig {
  Arch arch = Arch::cnn;
  std::size_t n_logits = 1;
  std::size_t n_mels = 128;
  std::size_t n_frames = 25;
  double dropout = 0.2;

  // transformer variants
  std::size_t embedding_size = 64;
  std::size_t lat_dim = 64;
  std::size_t mlp_dim = 128;
  std::size_t n_heads = 4;
  std::size_t head_dim = 0;  // 0: embedding_size / n_heads
  std::size_t n_blocks = 4;
  std::size_t patch_h = 16;
  std::size_t patch_w = 16;
  std::size_t vpatch_width = 7;
  std::size_t vpatch_stride = 1;
  AttentionScale attention_scale = AttentionScale::sqrt_dk;

  // sub-spectral classifier
  std::size_t ssc_bands = 4;

  std::vector<std::string> validate() const;
  std::size_t resolved_head_dim() const { return head_dim != 0 ? head_dim : embedding_size / n_heads; }
  /// Tokens fed to the transformer, class token excluded.
  std::size_t n_patches() const;
};

// Attention -----------------------------------------------------------------

/// softmax(q k^T * scale) over the key axis. q, k: [B, n, d] -> [B, n, n].
template <typename T>
Tensor<T> attention_weights(const Tensor<T>& q, const Tensor<T>& k, double scale);

/// attention_weights(q, k) v. Accepts [n, d] or [B, n, d].
template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, double scale);

template <typename T>
struct MultiHeadAttention {
  std::size_t n_heads = 1;
  std::size_t head_dim = 0;
  AttentionScale scale_mode = AttentionScale::sqrt_dk;
  // Head h owns columns [h*head_dim, (h+1)*head_dim) of each projection.
  Linear<T> query;   // [d, n_heads*head_dim], no bias
  Linear<T> key;     // [d, n_heads*head_dim], no bias
  Linear<T> value;   // [d, n_heads*head_dim], no bias
  Linear<T> output;  // [n_heads*head_dim, d]

  MultiHeadAttention() = default;
  MultiHeadAttention(ParameterSet<T>& params, const std::string& name, std::size_t d, std::size_t n_heads,
                     std::size_t head_dim, AttentionScale scale_mode, Rng& rng);
  double scale_for(std::size_t seq_len) const;
  /// x: [B, n, d] -> [B, n, d]
  Tensor<T> operator()(const Tensor<T>& x) const;
};

/// Pre-norm encoder block:
///   x += MHA(LN(x));  x += drop(FC(GELU-drop(FC(LN(x)))))
template <typename T>
struct TransformerBlock {
  LayerNorm<T> norm1;
  MultiHeadAttention<T> attn;
  LayerNorm<T> norm2;
  Linear<T> fc1;
  Linear<T> fc2;
  double dropout = 0.0;

  TransformerBlock() = default;
  TransformerBlock(ParameterSet<T>& params, const std::string& name, const ModelConfig& cfg, Rng& rng);
  Tensor<T> operator()(const Tensor<T>& x, ForwardContext& ctx) const;
};

// Architectures ---------------------------------------------------------------

/// Every model maps a batch [B, 1, n_mels, n_frames] to logits [B, n_logits].
/// Input tensors are treated as data: no gradient flows back into them.
template <typename T>
class Model {
 public:
  explicit Model(ModelConfig cfg) : cfg_(std::move(cfg)) {}
  virtual ~Model() = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return cfg_; }
  ParameterSet<T>& params() { return params_; }
  const ParameterSet<T>& params() const { return params_; }

  virtual Tensor<T> forward(const Tensor<T>& input, ForwardContext& ctx) = 0;

 protected:
  void check_input(const Tensor<T>& input) const;

  ModelConfig cfg_;
  ParameterSet<T> params_;
};

/// BN -> dropout -> conv3x3(pad 1) -> maxpool 2x2 -> GELU
template <typename T>
struct ConvBlock {
  BatchNorm<T> norm;
  Conv2d<T> conv;
  double dropout = 0.0;

  ConvBlock() = default;
  ConvBlock(ParameterSet<T>& params, const std::string& name, std::size_t in_channels, std::size_t filters,
            double dropout, Rng& rng);
  Tensor<T> operator()(const Tensor<T>& x, ForwardContext& ctx);
};

template <typename T>
class CnnBaseline final : public Model<T> {
 public:
  static constexpr std::size_t kFilters[4] = {32, 64, 128, 64};
  static constexpr std::size_t kHidden = 128;

  CnnBaseline(ModelConfig cfg, Rng& rng);
  Tensor<T> forward(const Tensor<T>& input, ForwardContext& ctx) override;
  /// Flattened feature size after the four pooled blocks.
  std::size_t feature_size() const;

 private:
  std::vector<ConvBlock<T>> blocks_;
  BatchNorm<T> head_norm_;
  Linear<T> hidden_;
  Linear<T> classifier_;
};

template <typename T>
class SubSpectralClassifier final : public Model<T> {
 public:
  static constexpr std::size_t kFilters[2] = {32, 64};
  static constexpr std::size_t kHidden[2] = {128, 64};

  SubSpectralClassifier(ModelConfig cfg, Rng& rng);
  Tensor<T> forward(const Tensor<T>& input, ForwardContext& ctx) override;
  /// One [B, band_feature_size] embedding per mel band, low band first.
  std::vector<Tensor<T>> band_embeddings(const Tensor<T>& input, ForwardContext& ctx);
  std::size_t band_feature_size() const;

 private:
  std::vector<std::vector<ConvBlock<T>>> bands_;
  Linear<T> fc1_;
  Linear<T> fc2_;
  Linear<T> classifier_;
};

/// Grid (vit) or vertical (vvit) patches -> linear embedding -> class token +
/// positional table -> encoder blocks -> class-token head.
template <typename T>
class VisionTransformer final : public Model<T> {
 public:
  VisionTransformer(ModelConfig cfg, Rng& rng);
  Tensor<T> forward(const Tensor<T>& input, ForwardContext& ctx) override;
  /// [B, n_patches, patch_dim] patch matrix for each sample (no gradient).
  Tensor<T> patch_tokens(const Tensor<T>& input) const;
  /// Forward from a precomputed patch matrix.
  Tensor<T> forward_patches(const Tensor<T>& patches, ForwardContext& ctx) const;
  std::size_t patch_dim() const;

 private:
  Linear<T> embed_;
  Tensor<T> class_token_;  // [1, d]
  Tensor<T> positions_;    // [n_patches + 1, d]
  std::vector<TransformerBlock<T>> blocks_;
  LayerNorm<T> head_norm_;
  Linear<T> head_;
  Linear<T> classifier_;
};

template <typename T>
std::unique_ptr<Model<T>> make_model(const ModelConfig& cfg, Rng& rng);

/// Stacks equally sized spectrograms into [B, 1, n_mels, n_frames].
template <typename T>
Tensor<T> spectrogram_batch(std::span<const MelSpectrogram* const> specs);

/// Single-spectrogram convenience: [n_logits] logits.
template <typename T>
std::vector<T> predict_logits(Model<T>& model, const MelSpectrogram& spec);

}  // namespace melbench
