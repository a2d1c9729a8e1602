// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "melbench/sampling.hpp"

namespace melbench {

struct SynthOptions {
  std::size_t n_per_class = 20;  // clips of the largest class
  std::size_t n_classes = 2;
  std::uint64_t seed = 0;
  /// Largest-to-smallest class ratio; counts fall off as n / (1 + (r - 1) c / (C - 1)).
  double imbalance = 1.0;
  double duration = 1.0;  // seconds
  int sample_rate = 16000;

  std::vector<std::string> validate() const;
};

struct SynthClip {
  std::string name;  // relative path inside the output directory
  int label = 0;
  Split split = Split::train;
  std::vector<float> samples;
};

std::vector<std::size_t> synth_class_counts(const SynthOptions& opts);

/// Band-limited noise around a class-specific centre plus a class-specific
/// tone, with a random per-clip gain and a faint broadband floor.
std::vector<float> synth_waveform(std::size_t label, const SynthOptions& opts, Rng& rng);

/// All clips with their stratified 70/15/15 split; deterministic in opts.
std::vector<SynthClip> synth_clips(const SynthOptions& opts);

std::string synth_class_name(std::size_t label);

/// Writes audio/<clip>.wav files plus manifest.csv; returns the manifest.
Manifest write_synth_dataset(const SynthOptions& opts, const std::filesystem::path& out_dir);

}  // namespace melbench
