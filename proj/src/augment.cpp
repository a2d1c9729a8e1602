// SPDX-License-Identifier: Apache-2.0
#include "melbench/augment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>

#include "melbench/error.hpp"

namespace melbench {

std::vector<std::string> AugmentParams::validate() const {
  std::vector<std::string> problems;
  auto in_unit = [](double v) { return std::isfinite(v) && v >= 0.0 && v <= 1.0; };
  auto non_negative = [](double v) { return std::isfinite(v) && v >= 0.0; };
  if (!in_unit(shift_ratio)) problems.push_back("augment.shift_ratio must be in [0, 1]");
  if (!non_negative(noise_ratio)) problems.push_back("augment.noise_ratio must be finite and >= 0");
  if (!in_unit(mask_ratio)) problems.push_back("augment.mask_ratio must be in [0, 1]");
  if (!non_negative(loudness_ratio)) problems.push_back("augment.loudness_ratio must be finite and >= 0");
  return problems;
}

bool AugmentParams::any() const {
  return shift_ratio > 0.0 || noise_ratio > 0.0 || mask_ratio > 0.0 || loudness_ratio > 0.0;
}

MelSpectrogram shift_frames(const MelSpectrogram& spec, std::ptrdiff_t frames) {
  MelSpectrogram out = spec;
  if (frames == 0) return out;
  const auto n = static_cast<std::ptrdiff_t>(spec.n_frames);
  std::fill(out.values.begin(), out.values.end(), 0.0f);
  for (std::size_t m = 0; m < spec.n_mels; ++m) {
    for (std::ptrdiff_t k = 0; k < n; ++k) {
      const std::ptrdiff_t src = k - frames;
      if (src >= 0 && src < n) {
        out.at(m, static_cast<std::size_t>(k)) = spec.at(m, static_cast<std::size_t>(src));
      }
    }
  }
  return out;
}

MelSpectrogram shift(const MelSpectrogram& spec, double shift_ratio, Rng& rng, ShiftDraw* draw) {
  if (shift_ratio == 0.0) return spec;
  ShiftDraw d;
  d.right = rng.bernoulli(0.5);
  d.fraction = rng.uniform(0.0, shift_ratio);
  d.frames = static_cast<std::size_t>(std::lround(d.fraction * static_cast<double>(spec.n_frames)));
  if (draw) *draw = d;
  const auto amount = static_cast<std::ptrdiff_t>(d.frames);
  return shift_frames(spec, d.right ? amount : -amount);
}

MelSpectrogram add_noise(const MelSpectrogram& spec, double noise_ratio, Rng& rng) {
  if (noise_ratio == 0.0) return spec;
  MelSpectrogram out = spec;
  for (auto& v : out.values) {
    const double n = rng.normal(0.0, noise_ratio);
    v = static_cast<float>(v + v * n);
  }
  return out;
}

namespace {

MaskWindow draw_window(std::size_t axis_len, double mask_ratio, Rng& rng) {
  MaskWindow w;
  w.start = static_cast<std::size_t>(rng.uniform_int(axis_len));
  w.width = rng.uniform(0.0, mask_ratio * static_cast<double>(axis_len));
  const auto span = static_cast<std::size_t>(std::ceil(w.width));
  w.cells = std::min(span, axis_len - w.start);
  return w;
}

}  // namespace

MelSpectrogram apply_masks(const MelSpectrogram& spec, const SpecAugmentDraw& draw) {
  MelSpectrogram out = spec;
  for (std::size_t m = 0; m < spec.n_mels; ++m) {
    for (std::size_t t = draw.time.start; t < draw.time.start + draw.time.cells; ++t) out.at(m, t) = 0.0f;
  }
  for (std::size_t m = draw.mel.start; m < draw.mel.start + draw.mel.cells; ++m) {
    for (std::size_t t = 0; t < spec.n_frames; ++t) out.at(m, t) = 0.0f;
  }
  return out;
}

MelSpectrogram spec_augment(const MelSpectrogram& spec, double mask_ratio, Rng& rng, SpecAugmentDraw* draw) {
  if (mask_ratio == 0.0) return spec;
  SpecAugmentDraw d;
  d.time = draw_window(spec.n_frames, mask_ratio, rng);
  d.mel = draw_window(spec.n_mels, mask_ratio, rng);
  if (draw) *draw = d;
  return apply_masks(spec, d);
}

MelSpectrogram scale_loudness(const MelSpectrogram& spec, double gain) {
  MelSpectrogram out = spec;
  const auto l = static_cast<float>(gain);
  for (auto& v : out.values) v = v + v * l;
  return out;
}

MelSpectrogram loudness(const MelSpectrogram& spec, double loudness_ratio, Rng& rng, double* drawn) {
  if (loudness_ratio == 0.0) return spec;
  const double l = rng.uniform(0.0, loudness_ratio);
  if (drawn) *drawn = l;
  return scale_loudness(spec, l);
}

MelSpectrogram apply_all(const MelSpectrogram& spec, const AugmentParams& params, Rng& rng) {
  if (auto problems = params.validate(); !problems.empty()) throw ConfigError(std::move(problems));
  MelSpectrogram out = shift(spec, params.shift_ratio, rng);
  out = add_noise(out, params.noise_ratio, rng);
  out = spec_augment(out, params.mask_ratio, rng);
  return loudness(out, params.loudness_ratio, rng);
}

}  // namespace melbench
