// SPDX-License-Identifier: Apache-2.0
#include "melbench/commands.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <thread>

#include "melbench/audio.hpp"
#include "melbench/checkpoint.hpp"
#include "melbench/error.hpp"
#include "melbench/metrics.hpp"

namespace fs = std::filesystem;

namespace melbench {

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace {

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

fs::path out_dir(const RunConfig& cfg) { return fs::path(cfg.paths.out_dir); }

fs::path cache_root(const RunConfig& cfg) {
  return cfg.paths.cache_dir.empty() ? out_dir(cfg) / "cache" : fs::path(cfg.paths.cache_dir);
}

fs::path cache_file(const RunConfig& cfg, const LabeledSample& s) {
  std::string name = s.source;
  for (char& c : name) {
    if (c == '/' || c == '\\' || c == ':') c = '_';
  }
  return spectrogram_cache_dir(cfg) / (name + ".mel");
}

void write_text(const fs::path& path, const std::string& text) { write_file_bytes(path, text); }

Checkpoint spectrogram_to_container(const MelSpectrogram& spec, const std::string& source, const std::string& hash) {
  Checkpoint c;
  c.arrays.push_back({"mel", {spec.n_mels, spec.n_frames}, spec.values});
  c.metadata = {{"kind", "spectrogram"},      {"source", source},
                {"source_hash", hash},        {"sample_rate", spec.sample_rate},
                {"hop_length", spec.hop_length}, {"log_floor", spec.log_floor}};
  return c;
}

MelSpectrogram spectrogram_from_container(const Checkpoint& c) {
  const NamedArray& a = c.at("mel");
  if (a.shape.size() != 2) throw InputError("spectrogram cache has a non-2-D array");
  MelSpectrogram s;
  s.n_mels = a.shape[0];
  s.n_frames = a.shape[1];
  s.values = a.values;
  s.sample_rate = c.metadata.value("sample_rate", 0);
  s.hop_length = c.metadata.value("hop_length", 0);
  s.log_floor = c.metadata.value("log_floor", 1e-10);
  s.source_id = c.metadata.value("source", std::string());
  return s;
}

void require_manifest(const RunConfig& cfg) {
  if (cfg.paths.manifest.empty()) throw ConfigError({"paths.manifest is required for this command"});
  if (!fs::exists(cfg.paths.manifest)) {
    throw ConfigError({"paths.manifest '" + cfg.paths.manifest + "' does not exist"});
  }
}

void write_metrics(const fs::path& dir, const Evaluation& ev, const Manifest& m, Task task) {
  fs::create_directories(dir);
  std::optional<double> auc;
  if (task == Task::binary) {
    bool both = false;
    for (int l : ev.labels) both = both || l != ev.labels.front();
    if (both) {
      const RocCurve roc = roc_curve(ev.scores, ev.labels);
      auc = roc.auc;
      write_text(dir / "roc.csv", format_roc_csv(roc));
    }
  }
  write_text(dir / "metrics.txt", format_report(ev.cm, m.class_names(), auc));
  write_text(dir / "confusion.csv", format_confusion_csv(ev.cm, m.class_names()));
}

}  // namespace

fs::path spectrogram_cache_dir(const RunConfig& cfg) {
  const auto& f = cfg.frontend;
  nlohmann::ordered_json key = {{"sample_rate", f.sample_rate}, {"n_fft", f.n_fft},   {"hop_length", f.hop_length},
                                {"n_mels", f.n_mels},           {"f_min", f.f_min},   {"f_max", f.f_max},
                                {"log_floor", f.log_floor}};
  return cache_root(cfg) / ("mel-" + hex64(fnv1a64(key.dump())).substr(0, 12));
}

fs::path manifest_path(const RunConfig& cfg) { return fs::path(cfg.paths.manifest); }

fs::path source_path(const Manifest& manifest, const LabeledSample& sample) {
  const fs::path p(sample.source);
  return p.is_absolute() ? p : manifest.base_dir / p;
}

PrepareReport prepare_cache(const RunConfig& cfg, const Manifest& manifest, std::size_t threads) {
  const auto& samples = manifest.samples();
  const fs::path dir = spectrogram_cache_dir(cfg);
  fs::create_directories(dir);

  enum class Outcome { written, skipped, failed };
  std::vector<Outcome> outcome(samples.size(), Outcome::failed);
  std::vector<std::string> error(samples.size());
  std::atomic<std::size_t> next{0};

  auto worker = [&] {
    for (std::size_t i = next++; i < samples.size(); i = next++) {
      const fs::path src = source_path(manifest, samples[i]);
      try {
        const std::string bytes = read_file_bytes(src);
        const std::string hash = hex64(fnv1a64(bytes));
        const fs::path dst = cache_file(cfg, samples[i]);
        if (fs::exists(dst)) {
          try {
            if (read_checkpoint_header(dst).at("metadata").value("source_hash", "") == hash) {
              outcome[i] = Outcome::skipped;
              continue;
            }
          } catch (const std::exception&) {
            // unreadable cache entry: rebuild it
          }
        }
        const DecodedAudio audio = decode_wav(bytes);
        if (audio.sample_rate != cfg.frontend.sample_rate) {
          throw InputError("sample rate " + std::to_string(audio.sample_rate) + " Hz, expected " +
                           std::to_string(cfg.frontend.sample_rate) + " Hz (no resampling)");
        }
        const MelSpectrogram spec = mel_spectrogram(audio.samples, cfg.frontend);
        write_checkpoint(dst, spectrogram_to_container(spec, samples[i].source, hash));
        outcome[i] = Outcome::written;
      } catch (const std::exception& e) {
        error[i] = src.string() + ": " + e.what();
      }
    }
  };

  std::size_t n_threads = threads != 0 ? threads : std::max(1u, std::thread::hardware_concurrency());
  n_threads = std::min(n_threads, std::max<std::size_t>(samples.size(), 1));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  PrepareReport report;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (outcome[i] == Outcome::written) ++report.written;
    else if (outcome[i] == Outcome::skipped) ++report.skipped;
    else report.failures.push_back(error[i]);
  }
  return report;
}

PrepareReport cmd_prepare(const RunConfig& cfg, std::size_t threads) {
  require_manifest(cfg);
  const Manifest manifest = read_manifest(cfg.paths.manifest);
  PrepareReport report = prepare_cache(cfg, manifest, threads);
  if (!report.failures.empty()) {
    std::string msg = std::to_string(report.failures.size()) + " of " + std::to_string(manifest.samples().size()) +
                      " files could not be prepared:";
    for (const auto& f : report.failures) msg += "\n  " + f;
    throw InputError(msg);
  }
  return report;
}

std::vector<MelSpectrogram> load_spectrograms(const RunConfig& cfg, const Manifest& manifest) {
  const PrepareReport report = prepare_cache(cfg, manifest);
  if (!report.failures.empty()) {
    std::string msg = std::to_string(report.failures.size()) + " files could not be prepared:";
    for (const auto& f : report.failures) msg += "\n  " + f;
    throw InputError(msg);
  }
  std::vector<MelSpectrogram> specs;
  specs.reserve(manifest.samples().size());
  for (const auto& s : manifest.samples()) {
    specs.push_back(normalize_for_model(spectrogram_from_container(read_checkpoint(cache_file(cfg, s)))));
  }
  return specs;
}

Manifest cmd_synth(const SynthOptions& opts, const fs::path& dir) { return write_synth_dataset(opts, dir); }

TrainResult cmd_train(const RunConfig& cfg, std::ostream* progress) {
  if (auto p = cfg.validate(); !p.empty()) throw ConfigError(std::move(p));
  require_manifest(cfg);
  const fs::path dir = out_dir(cfg);
  fs::create_directories(dir);
  write_text(dir / "resolved-config.json", format_run_config(cfg));

  const Manifest manifest = read_manifest(cfg.paths.manifest);
  const std::vector<MelSpectrogram> specs = load_spectrograms(cfg, manifest);

  Rng init = Rng::derive(cfg.train.seed, {0});
  auto model = make_model<float>(cfg.model, init);
  TrainData data{&manifest, specs, cfg.frontend.target_frames()};

  std::ofstream history(dir / "history.log", std::ios::trunc);
  if (!history) throw InputError("cannot write " + (dir / "history.log").string());
  TrainHooks hooks;
  hooks.on_epoch = [&](const EpochRecord& r) {
    const std::string line = format_history_line(r);
    history << line << '\n';
    history.flush();
    if (progress) *progress << line << '\n';
  };
  TrainResult result = train(*model, data, cfg.train, cfg.augment, &hooks);

  Checkpoint ckpt = result.best_checkpoint;
  ckpt.metadata["config"] = to_json(cfg);
  ckpt.metadata["class_names"] = manifest.class_names();
  write_checkpoint(dir / "best.ckpt", ckpt);

  const Evaluation ev = evaluate(*model, data, Split::devel, cfg.train);
  write_metrics(dir, ev, manifest, cfg.train.task);
  return result;
}

Evaluation cmd_eval(const RunConfig& cfg, const fs::path& checkpoint, Split split) {
  if (auto p = cfg.validate(); !p.empty()) throw ConfigError(std::move(p));
  require_manifest(cfg);
  RunConfig run = cfg;
  Checkpoint ckpt;
  const bool from_checkpoint = !checkpoint.empty();
  if (from_checkpoint) {
    ckpt = read_checkpoint(checkpoint);
    if (!ckpt.metadata.contains("config")) throw InputError(checkpoint.string() + " carries no run config");
    RunConfig saved = parse_run_config(ckpt.metadata["config"]);
    run.frontend = saved.frontend;
    run.model = saved.model;
    run.train.task = saved.train.task;
  }
  const Manifest manifest = read_manifest(run.paths.manifest);
  if (from_checkpoint && ckpt.metadata.contains("class_names") &&
      ckpt.metadata["class_names"].get<std::vector<std::string>>() != manifest.class_names()) {
    throw InputError("checkpoint classes do not match the manifest classes");
  }
  const std::vector<MelSpectrogram> specs = load_spectrograms(run, manifest);
  Rng init = Rng::derive(run.train.seed, {0});
  auto model = make_model<float>(run.model, init);
  if (from_checkpoint) model->params().load(ckpt);

  TrainData data{&manifest, specs, run.frontend.target_frames()};
  const Evaluation ev = evaluate(*model, data, split, run.train);
  write_metrics(out_dir(cfg) / ("eval-" + std::string(to_string(split))), ev, manifest, run.train.task);
  return ev;
}

std::vector<Trial> cmd_search(const RunConfig& cfg, std::ostream* progress) {
  if (auto p = cfg.validate(); !p.empty()) throw ConfigError(std::move(p));
  require_manifest(cfg);
  const fs::path dir = out_dir(cfg);
  fs::create_directories(dir);
  write_text(dir / "resolved-config.json", format_run_config(cfg));

  const nlohmann::json base = to_json(cfg);
  const std::string shared_cache = cache_root(cfg).string();
  auto trial_config = [&](const Assignment& a, std::size_t id) {
    nlohmann::json doc = base;
    apply_assignment(doc, a);
    doc["paths"]["out_dir"] = (dir / "trials" / std::to_string(id)).string();
    doc["paths"]["cache_dir"] = shared_cache;
    return parse_run_config(doc);
  };

  ObjectiveRunner objective = [&](const Assignment& a, std::size_t id) {
    const RunConfig trial = trial_config(a, id);
    const double score = cmd_train(trial).best_devel_uar;
    if (progress) *progress << "trial " << id << " devel_uar " << score << " " << a.dump() << '\n';
    return score;
  };
  SearchSettings settings{cfg.search.budget, cfg.search.seed, cfg.search.sampler, cfg.search.tpe};
  std::vector<Trial> trials = run_search(cfg.search.space, objective, settings, dir / "trials.log");
  if (!trials.empty() && trials.front().status == TrialStatus::complete) {
    write_text(dir / "best-config.json", format_run_config(trial_config(trials.front().assignment, trials.front().id)));
  }
  return trials;
}

std::string encode_pgm(const MelSpectrogram& spec, float lo, float hi) {
  std::string out = "P5\n" + std::to_string(spec.n_frames) + " " + std::to_string(spec.n_mels) + "\n255\n";
  const float range = hi > lo ? hi - lo : 1.0f;
  for (std::size_t r = 0; r < spec.n_mels; ++r) {
    const std::size_t m = spec.n_mels - 1 - r;
    for (std::size_t t = 0; t < spec.n_frames; ++t) {
      const float v = std::clamp((spec.at(m, t) - lo) / range, 0.0f, 1.0f);
      out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0f))));
    }
  }
  return out;
}

std::string spectrogram_csv(const MelSpectrogram& spec) {
  std::ostringstream os;
  os << std::setprecision(9);
  for (std::size_t m = 0; m < spec.n_mels; ++m) {
    for (std::size_t t = 0; t < spec.n_frames; ++t) os << (t ? "," : "") << spec.at(m, t);
    os << '\n';
  }
  return os.str();
}

std::vector<fs::path> cmd_preview(const RunConfig& cfg, std::size_t k) {
  if (auto p = cfg.validate(); !p.empty()) throw ConfigError(std::move(p));
  require_manifest(cfg);
  const Manifest manifest = read_manifest(cfg.paths.manifest);
  const std::vector<MelSpectrogram> specs = load_spectrograms(cfg, manifest);
  const fs::path dir = out_dir(cfg) / "preview";
  fs::create_directories(dir);
  std::vector<fs::path> written;
  const auto& train_idx = manifest.indices(Split::train);
  for (std::size_t n = 0; n < std::min(k, train_idx.size()); ++n) {
    const std::size_t i = train_idx[n];
    Rng unused(0);
    const MelSpectrogram before = crop_or_pad(specs[i], cfg.frontend.target_frames(), unused, false);
    Rng rng = Rng::derive(cfg.train.seed, {4, i});
    const MelSpectrogram after = apply_all(before, cfg.augment, rng);
    const auto [lo, hi] = std::minmax_element(before.values.begin(), before.values.end());
    char stem[32];
    std::snprintf(stem, sizeof stem, "%04zu", n);
    for (const auto& [suffix, spec] : {std::pair{"before", &before}, std::pair{"after", &after}}) {
      const fs::path pgm = dir / (std::string(stem) + "_" + suffix + ".pgm");
      const fs::path csv = dir / (std::string(stem) + "_" + suffix + ".csv");
      write_text(pgm, encode_pgm(*spec, *lo, *hi));
      write_text(csv, spectrogram_csv(*spec));
      written.push_back(pgm);
      written.push_back(csv);
    }
  }
  return written;
}

}  // namespace melbench
