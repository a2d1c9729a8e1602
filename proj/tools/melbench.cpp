// SPDX-License-Identifier: Apache-2.0
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "melbench/checkpoint.hpp"
#include "melbench/commands.hpp"
#include "melbench/error.hpp"

namespace {

using namespace melbench;

struct CommonFlags {
  std::string config;
  std::string preset;
  std::string arch;
  std::string manifest;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  bool no_oversample = false;
};

void add_common(CLI::App* cmd, CommonFlags& f, bool training_flags) {
  cmd->add_option("--config", f.config, "run config (JSON)");
  cmd->add_option("--preset", f.preset, "base preset: default, prs, ccs, synth-tiny");
  cmd->add_option("--manifest", f.manifest, "manifest CSV (path,label,split)");
  cmd->add_option("--out", f.out, "output directory");
  cmd->add_option("--seed", f.seed, "training seed");
  if (training_flags) {
    cmd->add_option("--arch", f.arch, "cnn, ssc, vit or vvit");
    cmd->add_option("--epochs", f.epochs, "training epochs");
    cmd->add_flag("--no-oversample", f.no_oversample, "train on the natural class distribution");
  }
}

RunConfig resolve(const CommonFlags& f) {
  nlohmann::json doc = {{"schema_version", kSchemaVersion}};
  if (!f.config.empty()) {
    try {
      doc = nlohmann::json::parse(read_file_bytes(f.config));
    } catch (const nlohmann::json::parse_error& e) {
      throw InputError(f.config + ": not valid JSON: " + e.what());
    }
  }
  if (!f.preset.empty()) doc["preset"] = f.preset;
  if (!f.arch.empty()) doc["model"]["arch"] = f.arch;
  if (f.seed) doc["train"]["seed"] = *f.seed;
  if (f.epochs) doc["train"]["epochs"] = *f.epochs;
  if (!f.manifest.empty()) doc["paths"]["manifest"] = f.manifest;
  if (!f.out.empty()) doc["paths"]["out_dir"] = f.out;
  if (f.no_oversample) doc["train"]["oversample"] = false;
  try {
    return parse_run_config(doc);
  } catch (const ConfigError& e) {
    if (f.config.empty()) throw;
    std::vector<std::string> problems;
    for (const auto& p : e.problems()) problems.push_back(f.config + ": " + p);
    throw ConfigError(std::move(problems));
  }
}

Split split_arg(const std::string& text) {
  Split s;
  if (!parse_split(text, s)) throw InputError("--split must be train, devel or test");
  return s;
}

int run(int argc, char** argv) {
  CLI::App app{"melbench: mel-spectrogram classifiers, augmentation and hyper-parameter search"};
  app.require_subcommand(1);

  CommonFlags prepare_f, train_f, eval_f, search_f, preview_f;
  std::size_t threads = 0;
  auto* prepare = app.add_subcommand("prepare", "decode manifest audio into cached spectrograms");
  add_common(prepare, prepare_f, false);
  prepare->add_option("--threads", threads, "worker threads (0 = all cores)");

  SynthOptions synth_opts;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "generate a synthetic labeled dataset");
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--n-per-class", synth_opts.n_per_class, "clips in the largest class");
  synth->add_option("--classes", synth_opts.n_classes, "2 or 5");
  synth->add_option("--seed", synth_opts.seed, "generator seed");
  synth->add_option("--imbalance", synth_opts.imbalance, "largest-to-smallest class ratio");
  synth->add_option("--duration", synth_opts.duration, "clip length in seconds");

  auto* train = app.add_subcommand("train", "train one model and keep the best devel checkpoint");
  add_common(train, train_f, true);

  std::string checkpoint;
  std::string split = "devel";
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a split");
  add_common(eval, eval_f, false);
  eval->add_option("--checkpoint", checkpoint, "checkpoint from train (omit for an untrained model)");
  eval->add_option("--split", split, "train, devel or test");

  std::optional<std::size_t> budget;
  std::string sampler;
  auto* search = app.add_subcommand("search", "hyper-parameter search over the configured space");
  add_common(search, search_f, true);
  search->add_option("--budget", budget, "number of trials");
  search->add_option("--sampler", sampler, "tpe or random");

  std::size_t k = 4;
  auto* preview = app.add_subcommand("preview", "write before/after augmentation images");
  add_common(preview, preview_f, false);
  preview->add_option("-k", k, "number of train samples");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  if (*prepare) {
    const PrepareReport r = cmd_prepare(resolve(prepare_f), threads);
    std::cout << "prepared " << r.written << " files, " << r.skipped << " up to date\n";
  } else if (*synth) {
    const Manifest m = cmd_synth(synth_opts, synth_out);
    std::cout << "wrote " << m.samples().size() << " clips and " << synth_out << "/manifest.csv\n";
  } else if (*train) {
    const TrainResult r = cmd_train(resolve(train_f), &std::cout);
    std::cout << "best devel uar " << r.best_devel_uar << " at epoch " << r.best_epoch << '\n';
  } else if (*eval) {
    const Evaluation ev = cmd_eval(resolve(eval_f), checkpoint, split_arg(split));
    std::cout << split << " uar " << ev.uar << '\n';
  } else if (*search) {
    RunConfig cfg = resolve(search_f);
    if (budget) cfg.search.budget = *budget;
    if (!sampler.empty() && !parse_sampler(sampler, cfg.search.sampler)) {
      throw ConfigError({"--sampler must be tpe or random"});
    }
    const auto trials = cmd_search(cfg, &std::cout);
    if (!trials.empty() && trials.front().status == TrialStatus::complete) {
      std::cout << "best devel uar " << trials.front().objective << " (trial " << trials.front().id << ")\n";
    }
  } else if (*preview) {
    const auto files = cmd_preview(resolve(preview_f), k);
    std::cout << "wrote " << files.size() << " preview files\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const melbench::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const melbench::InputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const melbench::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 2;
  }
}
