// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "melbench/config.hpp"
#include "melbench/hpo.hpp"
#include "melbench/sampling.hpp"
#include "melbench/synth.hpp"
#include "melbench/training.hpp"

namespace melbench {

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL);

/// Directory holding cached spectrograms for this frontend; the name is a hash
/// of every parameter that changes spectrogram values.
std::filesystem::path spectrogram_cache_dir(const RunConfig& cfg);
std::filesystem::path manifest_path(const RunConfig& cfg);
std::filesystem::path source_path(const Manifest& manifest, const LabeledSample& sample);

struct PrepareReport {
  std::size_t written = 0;
  std::size_t skipped = 0;
  std::vector<std::string> failures;  // "<path>: <reason>"
};

/// Decodes every manifest WAV into a cached log-mel spectrogram, skipping
/// entries whose cache already matches the source bytes. Does not throw for
/// per-file failures; they are listed in the report.
PrepareReport prepare_cache(const RunConfig& cfg, const Manifest& manifest, std::size_t threads = 0);

/// prepare_cache, throwing one InputError that lists every failed file.
PrepareReport cmd_prepare(const RunConfig& cfg, std::size_t threads = 0);

/// Cached spectrograms for all manifest rows, normalized for the model.
std::vector<MelSpectrogram> load_spectrograms(const RunConfig& cfg, const Manifest& manifest);

Manifest cmd_synth(const SynthOptions& opts, const std::filesystem::path& out_dir);

/// Trains into paths.out_dir: resolved-config.json, history.log, best.ckpt,
/// metrics.txt, confusion.csv and (binary tasks) roc.csv, all on devel.
TrainResult cmd_train(const RunConfig& cfg, std::ostream* progress = nullptr);

/// Loads a checkpoint written by cmd_train (model and frontend come from its
/// embedded config) or, with an empty path, a freshly initialized model.
/// Writes metrics.txt, confusion.csv and roc.csv under out_dir/eval-<split>.
Evaluation cmd_eval(const RunConfig& cfg, const std::filesystem::path& checkpoint, Split split);

/// Search over cfg.search.space; trials.log and best-config.json in out_dir.
std::vector<Trial> cmd_search(const RunConfig& cfg, std::ostream* progress = nullptr);

/// Before/after augmentation images (PGM) and CSVs for the first k train rows
/// under out_dir/preview.
std::vector<std::filesystem::path> cmd_preview(const RunConfig& cfg, std::size_t k);

/// 8-bit binary PGM; low mel bins at the bottom, values mapped linearly from
/// [lo, hi] to [0, 255].
std::string encode_pgm(const MelSpectrogram& spec, float lo, float hi);
std::string spectrogram_csv(const MelSpectrogram& spec);

}  // namespace melbench
