// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "melbench/audio.hpp"
#include "melbench/augment.hpp"
#include "melbench/hpo.hpp"
#include "melbench/models.hpp"
#include "melbench/training.hpp"

namespace melbench {

inline constexpr int kSchemaVersion = 1;

struct PathsConfig {
  std::string manifest;
  std::string cache_dir;  // empty: <out_dir>/cache
  std::string out_dir = "run";
};

struct SearchConfig {
  std::size_t budget = 40;
  Sampler sampler = Sampler::tpe;
  std::uint64_t seed = 0;
  TpeSettings tpe;
  SearchSpace space;
};

/// Everything a run depends on. model.n_mels / model.n_frames are not part of
/// the document: they follow from the frontend (n_mels, target_frames()).
struct RunConfig {
  std::string preset = "default";
  FrontendConfig frontend;
  ModelConfig model;
  TrainConfig train;
  AugmentParams augment;
  PathsConfig paths;
  SearchConfig search;

  /// Every violated constraint across the nested configs.
  std::vector<std::string> validate() const;
};

std::vector<std::string> preset_names();
/// Throws ConfigError for an unknown name.
RunConfig preset(std::string_view name);
SearchSpace default_search_space();

nlohmann::ordered_json to_json(const RunConfig& cfg);

/// Overlays `doc` on the preset it names ("preset" key, default "default").
/// Unknown keys, wrong types and invalid values are all reported together
/// in one ConfigError.
RunConfig parse_run_config(const nlohmann::json& doc);
RunConfig read_run_config(const std::filesystem::path& path);
std::string format_run_config(const RunConfig& cfg);

/// Sets each "section.key" of the assignment inside a config document.
void apply_assignment(nlohmann::json& doc, const Assignment& assignment);

}  // namespace melbench
