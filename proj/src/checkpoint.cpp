// SPDX-License-Identifier: Apache-2.0
#include "melbench/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "melbench/error.hpp"

namespace melbench {
namespace {

constexpr std::string_view kMagic = "MELCKPT1\n";

std::uint32_t to_little_endian(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    return ((v & 0xFFu) << 24) | ((v & 0xFF00u) << 8) | ((v >> 8) & 0xFF00u) | (v >> 24);
  }
}

}  // namespace

const NamedArray* Checkpoint::find(std::string_view name) const {
  for (const auto& a : arrays) {
    if (a.name == name) return &a;
  }
  return nullptr;
}

const NamedArray& Checkpoint::at(std::string_view name) const {
  if (const NamedArray* a = find(name)) return *a;
  throw InputError("checkpoint has no array named '" + std::string(name) + "'");
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  nlohmann::json header;
  header["format"] = "melbench-container";
  header["version"] = 1;
  header["metadata"] = ckpt.metadata;
  nlohmann::json entries = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& a : ckpt.arrays) {
    if (numel(a.shape) != a.values.size()) {
      throw std::invalid_argument("array '" + a.name + "' has shape " + to_string(a.shape) +
                                  " but " + std::to_string(a.values.size()) + " values");
    }
    const std::size_t nbytes = a.values.size() * sizeof(float);
    entries.push_back({{"name", a.name},
                       {"shape", a.shape},
                       {"dtype", "float32"},
                       {"offset", offset},
                       {"nbytes", nbytes}});
    offset += nbytes;
  }
  header["arrays"] = std::move(entries);
  const std::string text = header.dump();

  std::string out;
  out.reserve(kMagic.size() + 24 + text.size() + offset);
  out += kMagic;
  out += std::to_string(text.size());
  out += '\n';
  out += text;
  for (const auto& a : ckpt.arrays) {
    for (float v : a.values) {
      std::uint32_t bits = to_little_endian(std::bit_cast<std::uint32_t>(v));
      char buf[4];
      std::memcpy(buf, &bits, 4);
      out.append(buf, 4);
    }
  }
  return out;
}

namespace {

nlohmann::json parse_header(std::string_view bytes, std::size_t& payload_start) {
  if (bytes.substr(0, kMagic.size()) != kMagic) throw InputError("not a melbench container (bad magic)");
  const std::size_t nl = bytes.find('\n', kMagic.size());
  if (nl == std::string_view::npos) throw InputError("truncated container header");
  std::size_t header_len = 0;
  try {
    header_len = std::stoull(std::string(bytes.substr(kMagic.size(), nl - kMagic.size())));
  } catch (const std::exception&) {
    throw InputError("malformed container header length");
  }
  if (nl + 1 + header_len > bytes.size()) throw InputError("truncated container header");
  payload_start = nl + 1 + header_len;
  try {
    return nlohmann::json::parse(bytes.substr(nl + 1, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed container header: ") + e.what());
  }
}

}  // namespace

Checkpoint parse_checkpoint(std::string_view bytes) {
  std::size_t payload = 0;
  const nlohmann::json header = parse_header(bytes, payload);
  Checkpoint ckpt;
  ckpt.metadata = header.value("metadata", nlohmann::json::object());
  for (const auto& e : header.at("arrays")) {
    if (e.at("dtype") != "float32") throw InputError("unsupported dtype " + e.at("dtype").dump());
    NamedArray a;
    a.name = e.at("name").get<std::string>();
    a.shape = e.at("shape").get<Shape>();
    const std::size_t offset = e.at("offset").get<std::size_t>();
    const std::size_t nbytes = e.at("nbytes").get<std::size_t>();
    if (nbytes != numel(a.shape) * sizeof(float) || payload + offset + nbytes > bytes.size()) {
      throw InputError("container array '" + a.name + "' is truncated or inconsistent");
    }
    a.values.resize(nbytes / sizeof(float));
    const char* src = bytes.data() + payload + offset;
    for (std::size_t i = 0; i < a.values.size(); ++i) {
      std::uint32_t bits;
      std::memcpy(&bits, src + 4 * i, 4);
      a.values[i] = std::bit_cast<float>(to_little_endian(bits));
    }
    ckpt.arrays.push_back(std::move(a));
  }
  return ckpt;
}

std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_bytes(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw InputError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_file_bytes(path, serialize_checkpoint(ckpt));
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  return parse_checkpoint(read_file_bytes(path));
}

nlohmann::json read_checkpoint_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::string head(kMagic.size() + 32, '\0');
  in.read(head.data(), static_cast<std::streamsize>(head.size()));
  head.resize(static_cast<std::size_t>(in.gcount()));
  const std::size_t nl = head.find('\n', kMagic.size());
  if (head.substr(0, kMagic.size()) != kMagic || nl == std::string::npos) {
    throw InputError("not a melbench container: " + path.string());
  }
  const std::size_t header_len = std::stoull(head.substr(kMagic.size(), nl - kMagic.size()));
  std::string buf(nl + 1 + header_len, '\0');
  in.clear();
  in.seekg(0);
  in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (static_cast<std::size_t>(in.gcount()) != buf.size()) throw InputError("truncated container " + path.string());
  std::size_t payload = 0;
  return parse_header(buf, payload);
}

}  // namespace melbench
