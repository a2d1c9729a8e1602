// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <concepts>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "melbench/rng.hpp"

namespace melbench {

enum class Split { train, devel, test };

std::string_view to_string(Split split);
/// Accepts exactly "train", "devel", "test".
bool parse_split(std::string_view text, Split& out);

struct LabeledSample {
  std::string source;  // path relative to the manifest directory, or an in-memory id
  int label = 0;
  Split split = Split::train;
};

/// Immutable list of samples with per-split class counts computed once.
class Manifest {
 public:
  Manifest() = default;
  Manifest(std::vector<LabeledSample> samples, std::vector<std::string> class_names);

  const std::vector<LabeledSample>& samples() const { return samples_; }
  const std::vector<std::string>& class_names() const { return class_names_; }
  std::size_t n_classes() const { return class_names_.size(); }

  const std::vector<std::size_t>& class_counts(Split split) const;
  /// Indices into samples(), in manifest order.
  const std::vector<std::size_t>& indices(Split split) const { return by_split_[index_of(split)]; }
  /// Train-split indices of one class.
  const std::vector<std::size_t>& train_indices_of(std::size_t label) const { return train_by_class_[label]; }

  std::filesystem::path base_dir;

 private:
  static std::size_t index_of(Split s) { return static_cast<std::size_t>(s); }

  std::vector<LabeledSample> samples_;
  std::vector<std::string> class_names_;
  std::array<std::vector<std::size_t>, 3> counts_;
  std::array<std::vector<std::size_t>, 3> by_split_;
  std::vector<std::vector<std::size_t>> train_by_class_;
};

/// CSV with header `path,label,split`; class names are the sorted unique labels.
Manifest parse_manifest(std::string_view csv);
Manifest read_manifest(const std::filesystem::path& path);
std::string format_manifest(const Manifest& manifest);

/// max train count over classes, times the number of classes.
std::size_t epoch_size(const Manifest& manifest);

template <typename Source>
concept UniformIntSource = requires(Source s, std::uint64_t n) {
  { s.uniform_int(n) } -> std::convertible_to<std::uint64_t>;
};

/// Class-balanced epoch with replacement: each draw picks a class uniformly,
/// then a train sample of that class uniformly. Returns manifest indices.
template <UniformIntSource Source>
std::vector<std::size_t> draw_epoch(const Manifest& manifest, Source& rng) {
  const std::size_t total = epoch_size(manifest);
  std::vector<std::size_t> out;
  out.reserve(total);
  for (std::size_t i = 0; i < total; ++i) {
    const auto cls = static_cast<std::size_t>(rng.uniform_int(manifest.n_classes()));
    const auto& members = manifest.train_indices_of(cls);
    out.push_back(members[static_cast<std::size_t>(rng.uniform_int(members.size()))]);
  }
  return out;
}

/// Every train sample once, shuffled; the non-rebalanced diagnostic epoch.
std::vector<std::size_t> natural_epoch(const Manifest& manifest, Rng& rng);

}  // namespace melbench
