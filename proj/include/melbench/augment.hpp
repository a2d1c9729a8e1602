// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "melbench/audio.hpp"
#include "melbench/rng.hpp"

namespace melbench {

/// Strength of each spectrogram augmentation; 0 disables it.
struct AugmentParams {
  double shift_ratio = 0.0;     // in [0, 1], fraction of the time axis
  double noise_ratio = 0.0;     // >= 0, stddev of relative noise
  double mask_ratio = 0.0;      // in [0, 1], max window as fraction of axis
  double loudness_ratio = 0.0;  // >= 0, max relative gain

  std::vector<std::string> validate() const;
  bool any() const;
};

struct ShiftDraw {
  bool right = false;
  double fraction = 0.0;
  std::size_t frames = 0;
};

struct MaskWindow {
  std::size_t start = 0;
  double width = 0.0;      // continuous draw
  std::size_t cells = 0;   // masked cells after clipping at the axis end
};

struct SpecAugmentDraw {
  MaskWindow time;
  MaskWindow mel;
};

/// Moves frames by `frames` (positive = right); vacated frames become 0.
MelSpectrogram shift_frames(const MelSpectrogram& spec, std::ptrdiff_t frames);
/// direction ~ Bernoulli(0.5), fraction ~ U(0, shift_ratio) of the time axis.
MelSpectrogram shift(const MelSpectrogram& spec, double shift_ratio, Rng& rng, ShiftDraw* draw = nullptr);

/// S + S * n with n ~ N(0, noise_ratio) per cell.
MelSpectrogram add_noise(const MelSpectrogram& spec, double noise_ratio, Rng& rng);

/// Zeroes one time window then one mel window; each starts at s ~ U{0..len-1}
/// and spans w ~ U(0, mask_ratio * len) cells, clipped at the axis end.
MelSpectrogram spec_augment(const MelSpectrogram& spec, double mask_ratio, Rng& rng,
                            SpecAugmentDraw* draw = nullptr);
MelSpectrogram apply_masks(const MelSpectrogram& spec, const SpecAugmentDraw& draw);

/// S + S * l.
MelSpectrogram scale_loudness(const MelSpectrogram& spec, double gain);
/// l ~ U(0, loudness_ratio), then S + S * l.
MelSpectrogram loudness(const MelSpectrogram& spec, double loudness_ratio, Rng& rng, double* drawn = nullptr);

/// shift -> noise -> spec_augment -> loudness, with fresh draws per call.
MelSpectrogram apply_all(const MelSpectrogram& spec, const AugmentParams& params, Rng& rng);

}  // namespace melbench
