// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "melbench/tensor.hpp"

namespace melbench {

/// One named float32 array in a container file.
struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

/// Container layout:
///
///   MELCKPT1\n
///   <header byte count, decimal>\n
///   <JSON header: arrays (name, shape, dtype, offset, nbytes) + metadata>
///   <raw little-endian float32 payload, arrays in header order>
///
/// Offsets are relative to the start of the payload.
struct Checkpoint {
  std::vector<NamedArray> arrays;
  nlohmann::json metadata = nlohmann::json::object();

  const NamedArray* find(std::string_view name) const;
  const NamedArray& at(std::string_view name) const;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(std::string_view bytes);

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Reads only the JSON header (cheap up-to-date checks on cache files).
nlohmann::json read_checkpoint_header(const std::filesystem::path& path);

std::string read_file_bytes(const std::filesystem::path& path);
/// Writes via a temporary sibling and rename so readers never see partial files.
void write_file_bytes(const std::filesystem::path& path, std::string_view bytes);

}  // namespace melbench
