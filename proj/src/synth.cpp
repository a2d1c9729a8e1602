// SPDX-License-Identifier: Apache-2.0
#include "melbench/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "melbench/audio.hpp"
#include "melbench/checkpoint.hpp"
#include "melbench/error.hpp"

namespace melbench {

std::vector<std::string> SynthOptions::validate() const {
  std::vector<std::string> p;
  if (n_classes != 2 && n_classes != 5) p.push_back("synth: n_classes must be 2 or 5");
  if (n_per_class < 1) p.push_back("synth: n_per_class must be >= 1");
  if (!(std::isfinite(imbalance) && imbalance >= 1.0)) p.push_back("synth: imbalance must be >= 1");
  if (!(duration > 0.0 && duration <= 60.0)) p.push_back("synth: duration must be in (0, 60] seconds");
  if (sample_rate < 8000) p.push_back("synth: sample_rate must be >= 8000");
  return p;
}

std::vector<std::size_t> synth_class_counts(const SynthOptions& opts) {
  std::vector<std::size_t> counts(opts.n_classes);
  const double n = static_cast<double>(opts.n_per_class);
  for (std::size_t c = 0; c < opts.n_classes; ++c) {
    const double step = opts.n_classes > 1 ? static_cast<double>(c) / static_cast<double>(opts.n_classes - 1) : 0.0;
    counts[c] = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(n / (1.0 + (opts.imbalance - 1.0) * step))));
  }
  return counts;
}

std::string synth_class_name(std::size_t label) { return "class" + std::to_string(label); }

std::vector<float> synth_waveform(std::size_t label, const SynthOptions& opts, Rng& rng) {
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  constexpr std::size_t kPartials = 24;
  const double centre = 700.0 + 1300.0 * static_cast<double>(label);
  const double tone = centre + 650.0;
  const double band = 400.0;
  const double sr = static_cast<double>(opts.sample_rate);
  const auto n = static_cast<std::size_t>(std::lround(opts.duration * sr));

  struct Partial {
    double freq, phase, amp;
  };
  std::vector<Partial> partials;
  for (std::size_t k = 0; k < kPartials; ++k) {
    partials.push_back({centre + rng.uniform(-band / 2, band / 2), rng.uniform(0.0, kTwoPi),
                        0.3 / std::sqrt(static_cast<double>(kPartials))});
  }
  const double tone_phase = rng.uniform(0.0, kTwoPi);
  const double gain = rng.uniform(0.5, 1.0);

  std::vector<float> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / sr;
    double v = 0.2 * std::sin(kTwoPi * tone * t + tone_phase);
    for (const auto& p : partials) v += p.amp * std::sin(kTwoPi * p.freq * t + p.phase);
    v += 0.01 * rng.normal();
    out[i] = static_cast<float>(std::clamp(gain * v, -1.0, 1.0));
  }
  return out;
}

std::vector<SynthClip> synth_clips(const SynthOptions& opts) {
  if (auto p = opts.validate(); !p.empty()) throw ConfigError(std::move(p));
  const auto counts = synth_class_counts(opts);
  std::vector<SynthClip> clips;
  for (std::size_t c = 0; c < opts.n_classes; ++c) {
    const std::size_t n = counts[c];
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng split_rng = Rng::derive(opts.seed, {0, c});
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[split_rng.uniform_int(i)]);
    const auto n_train = static_cast<std::size_t>(std::lround(0.70 * static_cast<double>(n)));
    const auto n_devel = static_cast<std::size_t>(std::lround(0.15 * static_cast<double>(n)));
    std::vector<Split> split_of(n);
    for (std::size_t r = 0; r < n; ++r) {
      split_of[order[r]] = r < n_train ? Split::train : (r < n_train + n_devel ? Split::devel : Split::test);
    }
    for (std::size_t i = 0; i < n; ++i) {
      Rng rng = Rng::derive(opts.seed, {1, c, i});
      char name[64];
      std::snprintf(name, sizeof name, "audio/%s_%04zu.wav", synth_class_name(c).c_str(), i);
      clips.push_back({name, static_cast<int>(c), split_of[i], synth_waveform(c, opts, rng)});
    }
  }
  return clips;
}

Manifest write_synth_dataset(const SynthOptions& opts, const std::filesystem::path& out_dir) {
  const auto clips = synth_clips(opts);
  std::vector<std::string> names;
  for (std::size_t c = 0; c < opts.n_classes; ++c) names.push_back(synth_class_name(c));
  std::vector<LabeledSample> samples;
  try {
    std::filesystem::create_directories(out_dir / "audio");
    for (const auto& clip : clips) {
      write_file_bytes(out_dir / clip.name, encode_wav(clip.samples, opts.sample_rate));
      samples.push_back({clip.name, clip.label, clip.split});
    }
  } catch (const std::filesystem::filesystem_error& e) {
    throw InputError(std::string("cannot write synthetic dataset: ") + e.what());
  }
  Manifest manifest(std::move(samples), std::move(names));
  write_file_bytes(out_dir / "manifest.csv", format_manifest(manifest));
  manifest.base_dir = out_dir;
  return manifest;
}

}  // namespace melbench
