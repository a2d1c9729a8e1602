// SPDX-License-Identifier: Apache-2.0
#include "melbench/models.hpp"

#include <cmath>
#include <stdexcept>

#include "melbench/error.hpp"

namespace melbench {

std::string_view to_string(Arch arch) {
  switch (arch) {
    case Arch::cnn: return "cnn";
    case Arch::ssc: return "ssc";
    case Arch::vit: return "vit";
    case Arch::vvit: return "vvit";
  }
  return "?";
}

bool parse_arch(std::string_view text, Arch& out) {
  for (Arch a : {Arch::cnn, Arch::ssc, Arch::vit, Arch::vvit}) {
    if (text == to_string(a)) {
      out = a;
      return true;
    }
  }
  return false;
}

std::string_view to_string(AttentionScale scale) {
  return scale == AttentionScale::sqrt_dk ? "sqrt_dk" : "sqrt_seq";
}

bool parse_attention_scale(std::string_view text, AttentionScale& out) {
  if (text == "sqrt_dk") out = AttentionScale::sqrt_dk;
  else if (text == "sqrt_seq") out = AttentionScale::sqrt_seq;
  else return false;
  return true;
}

std::vector<std::string> ModelConfig::validate() const {
  std::vector<std::string> p;
  auto positive = [&](std::size_t v, const char* name) {
    if (v == 0) p.push_back(std::string("model.") + name + " must be >= 1");
  };
  positive(n_logits, "n_logits");
  positive(n_mels, "n_mels");
  positive(n_frames, "n_frames");
  if (!(dropout >= 0.0 && dropout < 1.0)) p.push_back("model.dropout must be in [0, 1)");
  switch (arch) {
    case Arch::cnn:
      if (n_mels < 16 || n_frames < 16) {
        p.push_back("model: cnn needs n_mels and n_frames >= 16 for four 2x2 pools, got " +
                    std::to_string(n_mels) + "x" + std::to_string(n_frames));
      }
      break;
    case Arch::ssc:
      if (ssc_bands == 0 || n_mels % ssc_bands != 0) {
        p.push_back("model.n_mels (" + std::to_string(n_mels) + ") must be divisible by model.ssc_bands (" +
                    std::to_string(ssc_bands) + ")");
      } else if (n_mels / ssc_bands < 4 || n_frames < 4) {
        p.push_back("model: ssc bands need at least 4x4 cells for two 2x2 pools");
      }
      break;
    case Arch::vit:
    case Arch::vvit:
      positive(embedding_size, "embedding_size");
      positive(lat_dim, "lat_dim");
      positive(mlp_dim, "mlp_dim");
      positive(n_heads, "n_heads");
      positive(n_blocks, "n_blocks");
      if (n_heads != 0 && head_dim == 0 && embedding_size % n_heads != 0) {
        p.push_back("model.embedding_size (" + std::to_string(embedding_size) +
                    ") must be divisible by model.n_heads (" + std::to_string(n_heads) +
                    ") when head_dim is derived");
      }
      if (arch == Arch::vit) {
        if (patch_h == 0 || patch_w == 0 || patch_h > n_mels || patch_w > n_frames) {
          p.push_back("model: patch " + std::to_string(patch_h) + "x" + std::to_string(patch_w) +
                      " does not fit a " + std::to_string(n_mels) + "x" + std::to_string(n_frames) + " input");
        }
      } else {
        if (vpatch_width == 0 || vpatch_width > n_frames) {
          p.push_back("model.vpatch_width (" + std::to_string(vpatch_width) + ") must be in [1, n_frames]");
        }
        positive(vpatch_stride, "vpatch_stride");
      }
      break;
  }
  return p;
}

std::size_t ModelConfig::n_patches() const {
  if (arch == Arch::vit) return grid_patch_count(n_mels, n_frames, patch_h, patch_w);
  if (arch == Arch::vvit) return vertical_patch_count(n_frames, vpatch_width, vpatch_stride);
  return 0;
}

// Attention -----------------------------------------------------------------

template <typename T>
Tensor<T> attention_weights(const Tensor<T>& q, const Tensor<T>& k, double scale) {
  return softmax(melbench::scale(bmm(q, k, true), static_cast<T>(scale)), 2);
}

template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, double scale) {
  if (q.rank() == 2) {
    auto lift = [](const Tensor<T>& t) { return reshape(t, {1, t.dim(0), t.dim(1)}); };
    Tensor<T> out = attention(lift(q), lift(k), lift(v), scale);
    return reshape(out, {q.dim(0), v.dim(1)});
  }
  if (q.rank() != 3 || k.rank() != 3 || v.rank() != 3 || q.dim(2) != k.dim(2) || k.dim(1) != v.dim(1) ||
      q.dim(0) != k.dim(0) || k.dim(0) != v.dim(0)) {
    throw std::invalid_argument("attention: incompatible shapes q" + to_string(q.shape()) + " k" +
                                to_string(k.shape()) + " v" + to_string(v.shape()));
  }
  return bmm(attention_weights(q, k, scale), v);
}

template <typename T>
MultiHeadAttention<T>::MultiHeadAttention(ParameterSet<T>& params, const std::string& name, std::size_t d,
                                          std::size_t heads, std::size_t hd, AttentionScale mode, Rng& rng)
    : n_heads(heads), head_dim(hd), scale_mode(mode) {
  if (heads == 0 || hd == 0) throw std::invalid_argument("multi-head attention needs heads and head_dim >= 1");
  query = Linear<T>(params, name + ".query", d, heads * hd, rng, false);
  key = Linear<T>(params, name + ".key", d, heads * hd, rng, false);
  value = Linear<T>(params, name + ".value", d, heads * hd, rng, false);
  output = Linear<T>(params, name + ".output", heads * hd, d, rng);
}

template <typename T>
double MultiHeadAttention<T>::scale_for(std::size_t seq_len) const {
  const double denom = scale_mode == AttentionScale::sqrt_dk ? static_cast<double>(head_dim)
                                                             : static_cast<double>(seq_len);
  return 1.0 / std::sqrt(denom);
}

template <typename T>
Tensor<T> MultiHeadAttention<T>::operator()(const Tensor<T>& x) const {
  if (x.rank() != 3) throw std::invalid_argument("multi-head attention expects [B, n, d], got " + to_string(x.shape()));
  const Tensor<T> q = query(x);
  const Tensor<T> k = key(x);
  const Tensor<T> v = value(x);
  const double s = scale_for(x.dim(1));
  std::vector<Tensor<T>> heads;
  heads.reserve(n_heads);
  for (std::size_t h = 0; h < n_heads; ++h) {
    const std::size_t off = h * head_dim;
    heads.push_back(attention(narrow(q, 2, off, head_dim), narrow(k, 2, off, head_dim),
                              narrow(v, 2, off, head_dim), s));
  }
  return output(n_heads == 1 ? heads.front() : concat(heads, 2));
}

template <typename T>
TransformerBlock<T>::TransformerBlock(ParameterSet<T>& params, const std::string& name, const ModelConfig& cfg,
                                      Rng& rng)
    : dropout(cfg.dropout) {
  const std::size_t d = cfg.embedding_size;
  norm1 = LayerNorm<T>(params, name + ".norm1", d);
  attn = MultiHeadAttention<T>(params, name + ".attn", d, cfg.n_heads, cfg.resolved_head_dim(),
                               cfg.attention_scale, rng);
  norm2 = LayerNorm<T>(params, name + ".norm2", d);
  fc1 = Linear<T>(params, name + ".mlp1", d, cfg.mlp_dim, rng);
  fc2 = Linear<T>(params, name + ".mlp2", cfg.mlp_dim, d, rng);
}

template <typename T>
Tensor<T> TransformerBlock<T>::operator()(const Tensor<T>& x, ForwardContext& ctx) const {
  Tensor<T> h = add(x, attn(norm1(x)));
  Tensor<T> m = apply_dropout(gelu(fc1(norm2(h))), dropout, ctx);
  m = apply_dropout(fc2(m), dropout, ctx);
  return add(h, m);
}

// Architectures ---------------------------------------------------------------

template <typename T>
void Model<T>::check_input(const Tensor<T>& input) const {
  const Shape expected{input.rank() == 4 ? input.dim(0) : 0, 1, cfg_.n_mels, cfg_.n_frames};
  if (input.rank() != 4 || input.shape() != expected || input.dim(0) == 0) {
    throw std::invalid_argument("model expects [B, 1, " + std::to_string(cfg_.n_mels) + ", " +
                                std::to_string(cfg_.n_frames) + "], got " + to_string(input.shape()));
  }
}

template <typename T>
ConvBlock<T>::ConvBlock(ParameterSet<T>& params, const std::string& name, std::size_t in_channels,
                        std::size_t filters, double p, Rng& rng)
    : dropout(p) {
  norm = BatchNorm<T>(params, name + ".bn", in_channels);
  conv = Conv2d<T>(params, name + ".conv", in_channels, filters, 3, 1, rng);
}

template <typename T>
Tensor<T> ConvBlock<T>::operator()(const Tensor<T>& x, ForwardContext& ctx) {
  Tensor<T> h = apply_dropout(norm(x, ctx.training), dropout, ctx);
  return gelu(maxpool2d(conv(h), 2));
}

namespace {

void require_valid(const ModelConfig& cfg, std::initializer_list<Arch> allowed) {
  bool ok = false;
  for (Arch a : allowed) ok = ok || a == cfg.arch;
  if (!ok) throw std::invalid_argument("model class does not implement arch " + std::string(to_string(cfg.arch)));
  if (auto problems = cfg.validate(); !problems.empty()) throw ConfigError(std::move(problems));
}

}  // namespace

template <typename T>
CnnBaseline<T>::CnnBaseline(ModelConfig cfg, Rng& rng) : Model<T>(std::move(cfg)) {
  require_valid(this->cfg_, {Arch::cnn});
  std::size_t channels = 1;
  for (std::size_t i = 0; i < 4; ++i) {
    blocks_.emplace_back(this->params_, "block" + std::to_string(i), channels, kFilters[i], this->cfg_.dropout,
                         rng);
    channels = kFilters[i];
  }
  head_norm_ = BatchNorm<T>(this->params_, "head.bn", feature_size());
  hidden_ = Linear<T>(this->params_, "head.fc", feature_size(), kHidden, rng);
  classifier_ = Linear<T>(this->params_, "classifier", kHidden, this->cfg_.n_logits, rng);
}

template <typename T>
std::size_t CnnBaseline<T>::feature_size() const {
  return kFilters[3] * (this->cfg_.n_mels / 16) * (this->cfg_.n_frames / 16);
}

template <typename T>
Tensor<T> CnnBaseline<T>::forward(const Tensor<T>& input, ForwardContext& ctx) {
  this->check_input(input);
  Tensor<T> h = input;
  for (auto& block : blocks_) h = block(h, ctx);
  h = apply_dropout(head_norm_(flatten(h), ctx.training), this->cfg_.dropout, ctx);
  return classifier_(gelu(hidden_(h)));
}

template <typename T>
SubSpectralClassifier<T>::SubSpectralClassifier(ModelConfig cfg, Rng& rng) : Model<T>(std::move(cfg)) {
  require_valid(this->cfg_, {Arch::ssc});
  for (std::size_t b = 0; b < this->cfg_.ssc_bands; ++b) {
    std::vector<ConvBlock<T>> band;
    std::size_t channels = 1;
    for (std::size_t i = 0; i < 2; ++i) {
      band.emplace_back(this->params_, "band" + std::to_string(b) + ".block" + std::to_string(i), channels,
                        kFilters[i], this->cfg_.dropout, rng);
      channels = kFilters[i];
    }
    bands_.push_back(std::move(band));
  }
  const std::size_t fused = band_feature_size() * this->cfg_.ssc_bands;
  fc1_ = Linear<T>(this->params_, "head.fc1", fused, kHidden[0], rng);
  fc2_ = Linear<T>(this->params_, "head.fc2", kHidden[0], kHidden[1], rng);
  classifier_ = Linear<T>(this->params_, "classifier", kHidden[1], this->cfg_.n_logits, rng);
}

template <typename T>
std::size_t SubSpectralClassifier<T>::band_feature_size() const {
  const std::size_t rows = this->cfg_.n_mels / this->cfg_.ssc_bands;
  return kFilters[1] * (rows / 4) * (this->cfg_.n_frames / 4);
}

template <typename T>
std::vector<Tensor<T>> SubSpectralClassifier<T>::band_embeddings(const Tensor<T>& input, ForwardContext& ctx) {
  this->check_input(input);
  const std::size_t rows = this->cfg_.n_mels / this->cfg_.ssc_bands;
  std::vector<Tensor<T>> out;
  out.reserve(bands_.size());
  for (std::size_t b = 0; b < bands_.size(); ++b) {
    Tensor<T> h = narrow(input, 2, b * rows, rows);
    for (auto& block : bands_[b]) h = block(h, ctx);
    out.push_back(flatten(h));
  }
  return out;
}

template <typename T>
Tensor<T> SubSpectralClassifier<T>::forward(const Tensor<T>& input, ForwardContext& ctx) {
  const auto embeddings = band_embeddings(input, ctx);
  Tensor<T> h = embeddings.size() == 1 ? embeddings.front() : concat(embeddings, 1);
  h = gelu(fc1_(apply_dropout(h, this->cfg_.dropout, ctx)));
  h = gelu(fc2_(apply_dropout(h, this->cfg_.dropout, ctx)));
  return classifier_(h);
}

template <typename T>
VisionTransformer<T>::VisionTransformer(ModelConfig cfg, Rng& rng) : Model<T>(std::move(cfg)) {
  require_valid(this->cfg_, {Arch::vit, Arch::vvit});
  const auto& c = this->cfg_;
  const std::size_t d = c.embedding_size;
  embed_ = Linear<T>(this->params_, "embed", patch_dim(), d, rng);
  class_token_ = this->params_.add("class_token", normal_init<T>({1, d}, 0.02, rng));
  positions_ = this->params_.add("positions", normal_init<T>({c.n_patches() + 1, d}, 0.02, rng));
  for (std::size_t i = 0; i < c.n_blocks; ++i) {
    blocks_.emplace_back(this->params_, "block" + std::to_string(i), c, rng);
  }
  head_norm_ = LayerNorm<T>(this->params_, "head.norm", d);
  head_ = Linear<T>(this->params_, "head.fc", d, c.lat_dim, rng);
  classifier_ = Linear<T>(this->params_, "classifier", c.lat_dim, c.n_logits, rng);
}

template <typename T>
std::size_t VisionTransformer<T>::patch_dim() const {
  const auto& c = this->cfg_;
  return c.arch == Arch::vit ? c.patch_h * c.patch_w : c.n_mels * c.vpatch_width;
}

template <typename T>
Tensor<T> VisionTransformer<T>::patch_tokens(const Tensor<T>& input) const {
  this->check_input(input);
  const auto& c = this->cfg_;
  const std::size_t B = input.dim(0);
  const std::size_t N = c.n_patches();
  const std::size_t P = patch_dim();
  const std::size_t plane = c.n_mels * c.n_frames;
  Tensor<T> out(Shape{B, N, P});
  auto dst = out.mutable_data();
  for (std::size_t b = 0; b < B; ++b) {
    const auto image = input.data().subspan(b * plane, plane);
    const PatchSequence<T> seq =
        c.arch == Arch::vit ? grid_patchify<T>(image, c.n_mels, c.n_frames, c.patch_h, c.patch_w)
                            : vertical_patchify<T>(image, c.n_mels, c.n_frames, c.vpatch_width, c.vpatch_stride);
    std::copy(seq.patches.begin(), seq.patches.end(), dst.begin() + static_cast<std::ptrdiff_t>(b * N * P));
  }
  return out;
}

template <typename T>
Tensor<T> VisionTransformer<T>::forward_patches(const Tensor<T>& patches, ForwardContext& ctx) const {
  const std::size_t B = patches.dim(0);
  const std::size_t d = this->cfg_.embedding_size;
  Tensor<T> tokens = embed_(patches);
  Tensor<T> cls = repeat_batch(class_token_, B);
  Tensor<T> h = add_broadcast(concat<T>({cls, tokens}, 1), positions_);
  for (const auto& block : blocks_) h = block(h, ctx);
  Tensor<T> summary = reshape(narrow(h, 1, 0, 1), {B, d});
  summary = apply_dropout(head_norm_(summary), this->cfg_.dropout, ctx);
  return classifier_(gelu(head_(summary)));
}

template <typename T>
Tensor<T> VisionTransformer<T>::forward(const Tensor<T>& input, ForwardContext& ctx) {
  return forward_patches(patch_tokens(input), ctx);
}

template <typename T>
std::unique_ptr<Model<T>> make_model(const ModelConfig& cfg, Rng& rng) {
  switch (cfg.arch) {
    case Arch::cnn: return std::make_unique<CnnBaseline<T>>(cfg, rng);
    case Arch::ssc: return std::make_unique<SubSpectralClassifier<T>>(cfg, rng);
    case Arch::vit:
    case Arch::vvit: return std::make_unique<VisionTransformer<T>>(cfg, rng);
  }
  throw std::invalid_argument("unknown arch");
}

template <typename T>
Tensor<T> spectrogram_batch(std::span<const MelSpectrogram* const> specs) {
  if (specs.empty()) throw std::invalid_argument("spectrogram_batch: empty batch");
  const std::size_t M = specs.front()->n_mels;
  const std::size_t F = specs.front()->n_frames;
  Tensor<T> out(Shape{specs.size(), 1, M, F});
  auto dst = out.mutable_data();
  for (std::size_t b = 0; b < specs.size(); ++b) {
    const MelSpectrogram& s = *specs[b];
    if (s.n_mels != M || s.n_frames != F) {
      throw std::invalid_argument("spectrogram_batch: '" + s.source_id + "' is " + std::to_string(s.n_mels) +
                                  "x" + std::to_string(s.n_frames) + ", batch is " + std::to_string(M) + "x" +
                                  std::to_string(F));
    }
    for (std::size_t i = 0; i < M * F; ++i) dst[b * M * F + i] = static_cast<T>(s.values[i]);
  }
  return out;
}

template <typename T>
std::vector<T> predict_logits(Model<T>& model, const MelSpectrogram& spec) {
  NoGradGuard guard;
  ForwardContext ctx;
  const MelSpectrogram* one[] = {&spec};
  const Tensor<T> logits = model.forward(spectrogram_batch<T>(one), ctx);
  return {logits.data().begin(), logits.data().end()};
}

#define MELBENCH_INSTANTIATE_MODELS(T)                                                              \
  template Tensor<T> attention_weights<T>(const Tensor<T>&, const Tensor<T>&, double);              \
  template Tensor<T> attention<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, double);    \
  template struct MultiHeadAttention<T>;                                                            \
  template struct TransformerBlock<T>;                                                              \
  template class Model<T>;                                                                          \
  template struct ConvBlock<T>;                                                                     \
  template class CnnBaseline<T>;                                                                    \
  template class SubSpectralClassifier<T>;                                                          \
  template class VisionTransformer<T>;                                                              \
  template std::unique_ptr<Model<T>> make_model<T>(const ModelConfig&, Rng&);                       \
  template Tensor<T> spectrogram_batch<T>(std::span<const MelSpectrogram* const>);                  \
  template std::vector<T> predict_logits<T>(Model<T>&, const MelSpectrogram&);

MELBENCH_INSTANTIATE_MODELS(float)
MELBENCH_INSTANTIATE_MODELS(double)

}  // namespace melbench
