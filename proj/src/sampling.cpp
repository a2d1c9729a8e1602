// SPDX-License-Identifier: Apache-2.0
#include "melbench/sampling.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <sstream>

#include "melbench/checkpoint.hpp"
#include "melbench/error.hpp"

namespace melbench {

std::string_view to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::devel: return "devel";
    case Split::test: return "test";
  }
  return "?";
}

bool parse_split(std::string_view text, Split& out) {
  if (text == "train") out = Split::train;
  else if (text == "devel") out = Split::devel;
  else if (text == "test") out = Split::test;
  else return false;
  return true;
}

Manifest::Manifest(std::vector<LabeledSample> samples, std::vector<std::string> class_names)
    : samples_(std::move(samples)), class_names_(std::move(class_names)) {
  const std::size_t n = class_names_.size();
  for (auto& c : counts_) c.assign(n, 0);
  train_by_class_.assign(n, {});
  for (std::size_t i = 0; i < samples_.size(); ++i) {
    const auto& s = samples_[i];
    if (s.label < 0 || static_cast<std::size_t>(s.label) >= n) {
      throw InputError("sample '" + s.source + "' has label " + std::to_string(s.label) +
                       " outside [0, " + std::to_string(n) + ")");
    }
    ++counts_[index_of(s.split)][static_cast<std::size_t>(s.label)];
    by_split_[index_of(s.split)].push_back(i);
    if (s.split == Split::train) train_by_class_[static_cast<std::size_t>(s.label)].push_back(i);
  }
}

const std::vector<std::size_t>& Manifest::class_counts(Split split) const { return counts_[index_of(split)]; }

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = line.find(',', start);
    fields.push_back(trim(line.substr(start, comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return fields;
}

bool is_header(const std::vector<std::string_view>& f) {
  return f.size() == 3 && f[0] == "path" && f[1] == "label" && f[2] == "split";
}

}  // namespace

Manifest parse_manifest(std::string_view csv) {
  struct Row {
    std::string path, label;
    Split split;
  };
  std::vector<Row> rows;
  bool seen_header = false;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < csv.size()) {
    std::size_t nl = csv.find('\n', pos);
    if (nl == std::string_view::npos) nl = csv.size();
    const std::string_view line = trim(csv.substr(pos, nl - pos));
    pos = nl + 1;
    ++line_no;
    if (line.empty()) continue;
    const auto fields = split_fields(line);
    if (!seen_header) {
      if (!is_header(fields)) {
        throw InputError("manifest line " + std::to_string(line_no) + ": expected header 'path,label,split'");
      }
      seen_header = true;
      continue;
    }
    if (is_header(fields)) throw InputError("manifest line " + std::to_string(line_no) + ": duplicate header");
    if (fields.size() != 3 || fields[0].empty() || fields[1].empty()) {
      throw InputError("manifest line " + std::to_string(line_no) + ": expected 3 non-empty fields");
    }
    Split split;
    if (!parse_split(fields[2], split)) {
      throw InputError("manifest line " + std::to_string(line_no) + ": unknown split '" +
                       std::string(fields[2]) + "' (expected train, devel or test)");
    }
    rows.push_back({std::string(fields[0]), std::string(fields[1]), split});
  }
  if (!seen_header) throw InputError("manifest is empty");

  std::set<std::string> labels;
  for (const auto& r : rows) labels.insert(r.label);
  std::vector<std::string> class_names(labels.begin(), labels.end());
  std::map<std::string, int> index;
  for (std::size_t i = 0; i < class_names.size(); ++i) index[class_names[i]] = static_cast<int>(i);

  std::vector<LabeledSample> samples;
  samples.reserve(rows.size());
  for (auto& r : rows) samples.push_back({std::move(r.path), index.at(r.label), r.split});
  return Manifest(std::move(samples), std::move(class_names));
}

Manifest read_manifest(const std::filesystem::path& path) {
  Manifest m;
  try {
    m = parse_manifest(read_file_bytes(path));
  } catch (const InputError& e) {
    throw InputError(path.string() + ": " + e.what());
  }
  m.base_dir = path.parent_path();
  return m;
}

std::string format_manifest(const Manifest& manifest) {
  std::ostringstream os;
  os << "path,label,split\n";
  for (const auto& s : manifest.samples()) {
    os << s.source << ',' << manifest.class_names()[static_cast<std::size_t>(s.label)] << ','
       << to_string(s.split) << '\n';
  }
  return os.str();
}

std::size_t epoch_size(const Manifest& manifest) {
  const auto& counts = manifest.class_counts(Split::train);
  if (counts.empty()) throw InputError("manifest has no classes");
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] == 0) {
      throw InputError("class '" + manifest.class_names()[c] + "' has no train samples");
    }
  }
  return *std::max_element(counts.begin(), counts.end()) * counts.size();
}

std::vector<std::size_t> natural_epoch(const Manifest& manifest, Rng& rng) {
  std::vector<std::size_t> order = manifest.indices(Split::train);
  for (std::size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(i))]);
  }
  return order;
}

}  // namespace melbench
