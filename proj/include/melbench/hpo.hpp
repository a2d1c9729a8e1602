// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "melbench/rng.hpp"

namespace melbench {

enum class DimensionKind { log_uniform, uniform, integer, categorical };

std::string_view to_string(DimensionKind kind);

struct Dimension {
  std::string name;  // dotted config path, e.g. "train.lr"
  DimensionKind kind = DimensionKind::uniform;
  double low = 0.0;
  double high = 1.0;
  std::vector<nlohmann::json> options;  // categorical only

  static Dimension log_uniform(std::string name, double low, double high);
  static Dimension uniform(std::string name, double low, double high);
  static Dimension integer(std::string name, std::int64_t low, std::int64_t high);
  static Dimension categorical(std::string name, std::vector<nlohmann::json> options);
};

struct SearchSpace {
  std::vector<Dimension> dimensions;

  std::vector<std::string> validate() const;
  /// {"train.lr": {"log_uniform": [1e-5, 1e-2]}, "model.arch": {"categorical": [...]}, ...}
  static SearchSpace from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

/// Dimension name -> value (number, or the chosen categorical option).
using Assignment = nlohmann::json;

enum class TrialStatus { pending, complete, failed };

std::string_view to_string(TrialStatus status);

struct Trial {
  std::size_t id = 0;
  Assignment assignment = nlohmann::json::object();
  double objective = 0.0;  // devel UAR, maximized
  TrialStatus status = TrialStatus::pending;
  std::string error;
};

std::string format_trial_line(const Trial& t);
Trial parse_trial_line(std::string_view line);

Assignment suggest_random(const SearchSpace& space, Rng& rng);

struct TpeSettings {
  double gamma = 0.25;
  std::size_t n_candidates = 24;
  std::size_t n_startup = 20;
};

/// Below n_startup complete trials this is suggest_random. Otherwise the
/// complete trials are split at the gamma quantile (best first) and each
/// dimension gets a good density l and a bad density g; n_candidates points
/// are drawn from l and the one maximizing sum(log l - log g) is returned.
///
/// Continuous and integer densities are mixtures of truncated Gaussians with
/// Scott's-rule bandwidth plus one uniform prior component; log-uniform dims
/// are modeled in log space. Categorical densities are add-one smoothed
/// frequencies.
Assignment suggest_tpe(const SearchSpace& space, std::span<const Trial> history, Rng& rng,
                       const TpeSettings& settings = {});

enum class Sampler { tpe, random };

std::string_view to_string(Sampler sampler);
bool parse_sampler(std::string_view text, Sampler& out);

struct SearchSettings {
  std::size_t budget = 400;
  std::uint64_t seed = 0;
  Sampler sampler = Sampler::tpe;
  TpeSettings tpe;
};

/// Objective for one trial; throwing marks the trial failed.
using ObjectiveRunner = std::function<double(const Assignment&, std::size_t trial_id)>;

/// Sequential suggest -> evaluate -> record loop. With a log path, trials
/// already in the log count towards the budget and every new trial is
/// appended as soon as it finishes. Trial i draws from Rng::derive(seed, {i}).
/// Returns complete trials by descending objective, then failed trials.
std::vector<Trial> run_search(const SearchSpace& space, const ObjectiveRunner& objective,
                              const SearchSettings& settings, const std::filesystem::path& log = {});

std::vector<Trial> read_trials(const std::filesystem::path& log);

}  // namespace melbench
