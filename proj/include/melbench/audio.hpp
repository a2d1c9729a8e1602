// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "melbench/rng.hpp"

namespace melbench {

struct DecodedAudio {
  std::vector<float> samples;  // mono, in [-1, 1)
  int sample_rate = 0;
};

/// RIFF/WAVE, 16-bit PCM, mono or stereo (stereo is averaged).
DecodedAudio decode_wav(std::string_view bytes);
DecodedAudio read_wav(const std::filesystem::path& path);

/// 16-bit mono PCM; samples are clamped to [-1, 1] and rounded.
std::string encode_wav(std::span<const float> samples, int sample_rate);

struct FrontendConfig {
  int sample_rate = 16000;
  int n_fft = 1024;
  int hop_length = 256;
  int n_mels = 128;
  double f_min = 0.0;
  double f_max = 8000.0;
  /// Seconds of audio seen by the model after cropping.
  double sample_length = 0.4;
  double log_floor = 1e-10;

  std::vector<std::string> validate() const;
  /// round(sample_length * sample_rate / hop_length), at least 1.
  std::size_t target_frames() const;
};

/// Log-power mel spectrogram, row-major [n_mels x n_frames].
struct MelSpectrogram {
  std::size_t n_mels = 0;
  std::size_t n_frames = 0;
  std::vector<float> values;
  int sample_rate = 0;
  int hop_length = 0;
  double log_floor = 1e-10;
  std::string source_id;

  float at(std::size_t mel, std::size_t frame) const { return values[mel * n_frames + frame]; }
  float& at(std::size_t mel, std::size_t frame) { return values[mel * n_frames + frame]; }
  /// Value of a silent cell, log(log_floor).
  float floor_value() const;
};

double hz_to_mel_slaney(double hz);
double mel_to_hz_slaney(double mel);

/// Slaney-normalized triangular filters, row-major [n_mels x (n_fft/2 + 1)].
std::vector<float> mel_filterbank(const FrontendConfig& cfg);

/// Hann-windowed STFT (no centering) -> power -> mel -> log(max(., log_floor)).
/// Frame count is 1 + floor((len - n_fft) / hop).
MelSpectrogram mel_spectrogram(std::span<const float> samples, const FrontendConfig& cfg);

/// Random contiguous crop in training, centered crop otherwise; shorter inputs
/// are padded symmetrically with the floor value.
MelSpectrogram crop_or_pad(const MelSpectrogram& spec, std::size_t target_frames, Rng& rng, bool training);

/// Maps log-power to (v - log(floor)) / -log(floor): silence becomes 0 and the
/// scale becomes roughly unit, which is what augmentations and models consume.
MelSpectrogram normalize_for_model(const MelSpectrogram& spec);

}  // namespace melbench
