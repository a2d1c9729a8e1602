// SPDX-License-Identifier: Apache-2.0
#include "melbench/audio.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <memory>
#include <mutex>
#include <numbers>

#include "melbench/checkpoint.hpp"
#include "melbench/error.hpp"

namespace melbench {
namespace {

std::uint32_t read_u32(std::string_view b, std::size_t at) {
  return static_cast<std::uint32_t>(static_cast<unsigned char>(b[at])) |
         static_cast<std::uint32_t>(static_cast<unsigned char>(b[at + 1])) << 8 |
         static_cast<std::uint32_t>(static_cast<unsigned char>(b[at + 2])) << 16 |
         static_cast<std::uint32_t>(static_cast<unsigned char>(b[at + 3])) << 24;
}

std::uint16_t read_u16(std::string_view b, std::size_t at) {
  return static_cast<std::uint16_t>(static_cast<unsigned char>(b[at]) |
                                    static_cast<unsigned char>(b[at + 1]) << 8);
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xFF));
  out.push_back(static_cast<char>(v >> 8));
}

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

// FFTW's planner is not re-entrant; execution on distinct arrays is.
std::mutex g_fftw_planner_mutex;

struct FftwFree {
  void operator()(void* p) const { fftwf_free(p); }
};

}  // namespace

DecodedAudio decode_wav(std::string_view b) {
  if (b.size() < 12 || b.substr(0, 4) != "RIFF" || b.substr(8, 4) != "WAVE") {
    throw InputError("not a RIFF/WAVE file");
  }
  std::size_t pos = 12;
  bool have_fmt = false;
  std::uint16_t channels = 0, bits = 0;
  std::uint32_t rate = 0;
  while (pos + 8 <= b.size()) {
    const std::string_view id = b.substr(pos, 4);
    const std::uint32_t size = read_u32(b, pos + 4);
    const std::size_t body = pos + 8;
    if (id == "fmt ") {
      if (size < 16 || body + size > b.size()) throw InputError("truncated WAV fmt chunk");
      std::uint16_t format = read_u16(b, body);
      channels = read_u16(b, body + 2);
      rate = read_u32(b, body + 4);
      bits = read_u16(b, body + 14);
      if (format == kFormatExtensible && size >= 26) format = read_u16(b, body + 24);
      if (format != kFormatPcm) {
        throw InputError("unsupported WAV encoding (format tag " + std::to_string(format) +
                         "); only 16-bit PCM is supported");
      }
      if (bits != 16) {
        throw InputError("unsupported WAV encoding: " + std::to_string(bits) +
                         "-bit samples; only 16-bit PCM is supported");
      }
      if (channels != 1 && channels != 2) {
        throw InputError("unsupported WAV channel count " + std::to_string(channels));
      }
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw InputError("WAV data chunk before fmt chunk");
      if (body + size > b.size()) throw InputError("truncated WAV data chunk");
      const std::size_t frame_bytes = 2u * channels;
      const std::size_t frames = size / frame_bytes;
      DecodedAudio audio;
      audio.sample_rate = static_cast<int>(rate);
      audio.samples.resize(frames);
      for (std::size_t f = 0; f < frames; ++f) {
        float acc = 0.0f;
        for (std::size_t c = 0; c < channels; ++c) {
          const auto s = static_cast<std::int16_t>(read_u16(b, body + f * frame_bytes + 2 * c));
          acc += static_cast<float>(s);
        }
        audio.samples[f] = acc / (32768.0f * static_cast<float>(channels));
      }
      return audio;
    }
    pos = body + size + (size & 1u);
  }
  throw InputError(have_fmt ? "truncated WAV file: no data chunk" : "truncated WAV file: no fmt chunk");
}

DecodedAudio read_wav(const std::filesystem::path& path) {
  try {
    return decode_wav(read_file_bytes(path));
  } catch (const InputError& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

std::string encode_wav(std::span<const float> samples, int sample_rate) {
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
  std::string out;
  out.reserve(44 + data_bytes);
  out += "RIFF";
  put_u32(out, 36 + data_bytes);
  out += "WAVEfmt ";
  put_u32(out, 16);
  put_u16(out, kFormatPcm);
  put_u16(out, 1);
  put_u32(out, static_cast<std::uint32_t>(sample_rate));
  put_u32(out, static_cast<std::uint32_t>(sample_rate) * 2);
  put_u16(out, 2);
  put_u16(out, 16);
  out += "data";
  put_u32(out, data_bytes);
  for (float s : samples) {
    const float clamped = std::clamp(s, -1.0f, 1.0f);
    const auto q = static_cast<std::int16_t>(std::lround(clamped * 32767.0f));
    put_u16(out, static_cast<std::uint16_t>(q));
  }
  return out;
}

// ---------------------------------------------------------------------------

std::vector<std::string> FrontendConfig::validate() const {
  std::vector<std::string> problems;
  if (sample_rate <= 0) problems.push_back("frontend.sample_rate must be positive");
  if (n_fft <= 0) problems.push_back("frontend.n_fft must be positive");
  if (hop_length <= 0 || hop_length > n_fft) problems.push_back("frontend.hop_length must be in [1, n_fft]");
  if (n_mels <= 0) problems.push_back("frontend.n_mels must be positive");
  if (!(f_min >= 0.0) || !(f_min < f_max)) problems.push_back("frontend.f_min must be >= 0 and < f_max");
  if (!(f_max <= sample_rate / 2.0)) problems.push_back("frontend.f_max must not exceed sample_rate / 2");
  if (!(sample_length > 0.0)) problems.push_back("frontend.sample_length must be positive");
  if (!(log_floor > 0.0 && log_floor < 1.0)) problems.push_back("frontend.log_floor must be in (0, 1)");
  return problems;
}

std::size_t FrontendConfig::target_frames() const {
  const double frames = std::round(sample_length * sample_rate / hop_length);
  return static_cast<std::size_t>(std::max(1.0, frames));
}

float MelSpectrogram::floor_value() const { return static_cast<float>(std::log(log_floor)); }

double hz_to_mel_slaney(double hz) {
  constexpr double f_sp = 200.0 / 3.0;
  constexpr double min_log_hz = 1000.0;
  constexpr double min_log_mel = min_log_hz / f_sp;
  const double logstep = std::log(6.4) / 27.0;
  if (hz < min_log_hz) return hz / f_sp;
  return min_log_mel + std::log(hz / min_log_hz) / logstep;
}

double mel_to_hz_slaney(double mel) {
  constexpr double f_sp = 200.0 / 3.0;
  constexpr double min_log_hz = 1000.0;
  constexpr double min_log_mel = min_log_hz / f_sp;
  const double logstep = std::log(6.4) / 27.0;
  if (mel < min_log_mel) return mel * f_sp;
  return min_log_hz * std::exp(logstep * (mel - min_log_mel));
}

std::vector<float> mel_filterbank(const FrontendConfig& cfg) {
  const std::size_t n_bins = static_cast<std::size_t>(cfg.n_fft) / 2 + 1;
  const std::size_t n_mels = static_cast<std::size_t>(cfg.n_mels);
  const double mel_lo = hz_to_mel_slaney(cfg.f_min);
  const double mel_hi = hz_to_mel_slaney(cfg.f_max);
  std::vector<double> edges(n_mels + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    const double mel = mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) / static_cast<double>(n_mels + 1);
    edges[i] = mel_to_hz_slaney(mel);
  }
  std::vector<float> fb(n_mels * n_bins, 0.0f);
  for (std::size_t m = 0; m < n_mels; ++m) {
    const double lo = edges[m], center = edges[m + 1], hi = edges[m + 2];
    const double enorm = 2.0 / (hi - lo);
    for (std::size_t k = 0; k < n_bins; ++k) {
      const double f = static_cast<double>(k) * cfg.sample_rate / cfg.n_fft;
      const double rising = (f - lo) / (center - lo);
      const double falling = (hi - f) / (hi - center);
      const double w = std::max(0.0, std::min(rising, falling));
      fb[m * n_bins + k] = static_cast<float>(w * enorm);
    }
  }
  return fb;
}

MelSpectrogram mel_spectrogram(std::span<const float> samples, const FrontendConfig& cfg) {
  if (auto problems = cfg.validate(); !problems.empty()) throw ConfigError(std::move(problems));
  const std::size_t n_fft = static_cast<std::size_t>(cfg.n_fft);
  const std::size_t hop = static_cast<std::size_t>(cfg.hop_length);
  if (samples.size() < n_fft) {
    throw InputError("signal of " + std::to_string(samples.size()) +
                     " samples is shorter than one FFT window (" + std::to_string(n_fft) + ")");
  }
  const std::size_t n_frames = 1 + (samples.size() - n_fft) / hop;
  const std::size_t n_bins = n_fft / 2 + 1;
  const std::size_t n_mels = static_cast<std::size_t>(cfg.n_mels);

  std::vector<float> window(n_fft);
  for (std::size_t n = 0; n < n_fft; ++n) {
    window[n] = static_cast<float>(0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * n / n_fft));
  }
  const std::vector<float> fb = mel_filterbank(cfg);

  std::unique_ptr<float, FftwFree> in(static_cast<float*>(fftwf_malloc(sizeof(float) * n_fft)));
  std::unique_ptr<fftwf_complex, FftwFree> out(
      static_cast<fftwf_complex*>(fftwf_malloc(sizeof(fftwf_complex) * n_bins)));
  fftwf_plan plan;
  {
    std::lock_guard lock(g_fftw_planner_mutex);
    plan = fftwf_plan_dft_r2c_1d(static_cast<int>(n_fft), in.get(), out.get(), FFTW_ESTIMATE);
  }

  MelSpectrogram spec;
  spec.n_mels = n_mels;
  spec.n_frames = n_frames;
  spec.values.assign(n_mels * n_frames, 0.0f);
  spec.sample_rate = cfg.sample_rate;
  spec.hop_length = cfg.hop_length;
  spec.log_floor = cfg.log_floor;

  std::vector<float> power(n_bins);
  for (std::size_t t = 0; t < n_frames; ++t) {
    const float* frame = samples.data() + t * hop;
    for (std::size_t n = 0; n < n_fft; ++n) in.get()[n] = frame[n] * window[n];
    fftwf_execute_dft_r2c(plan, in.get(), out.get());
    for (std::size_t k = 0; k < n_bins; ++k) {
      const float re = out.get()[k][0];
      const float im = out.get()[k][1];
      power[k] = re * re + im * im;
    }
    for (std::size_t m = 0; m < n_mels; ++m) {
      const float* w = fb.data() + m * n_bins;
      double acc = 0.0;
      for (std::size_t k = 0; k < n_bins; ++k) acc += static_cast<double>(w[k]) * power[k];
      spec.at(m, t) = static_cast<float>(std::log(std::max(acc, cfg.log_floor)));
    }
  }
  {
    std::lock_guard lock(g_fftw_planner_mutex);
    fftwf_destroy_plan(plan);
  }
  return spec;
}

MelSpectrogram crop_or_pad(const MelSpectrogram& spec, std::size_t target_frames, Rng& rng, bool training) {
  if (target_frames == 0) throw std::invalid_argument("crop_or_pad: target_frames must be >= 1");
  MelSpectrogram out = spec;
  if (spec.n_frames == target_frames) return out;
  out.n_frames = target_frames;
  out.values.assign(spec.n_mels * target_frames, spec.floor_value());
  if (spec.n_frames > target_frames) {
    const std::size_t slack = spec.n_frames - target_frames;
    const std::size_t start = training ? static_cast<std::size_t>(rng.uniform_int(slack + 1)) : slack / 2;
    for (std::size_t m = 0; m < spec.n_mels; ++m) {
      std::copy_n(spec.values.begin() + static_cast<std::ptrdiff_t>(m * spec.n_frames + start), target_frames,
                  out.values.begin() + static_cast<std::ptrdiff_t>(m * target_frames));
    }
  } else {
    const std::size_t left = (target_frames - spec.n_frames) / 2;
    for (std::size_t m = 0; m < spec.n_mels; ++m) {
      std::copy_n(spec.values.begin() + static_cast<std::ptrdiff_t>(m * spec.n_frames), spec.n_frames,
                  out.values.begin() + static_cast<std::ptrdiff_t>(m * target_frames + left));
    }
  }
  return out;
}

MelSpectrogram normalize_for_model(const MelSpectrogram& spec) {
  MelSpectrogram out = spec;
  const float floor = spec.floor_value();
  const float range = -floor;
  for (auto& v : out.values) v = (v - floor) / range;
  return out;
}

}  // namespace melbench
