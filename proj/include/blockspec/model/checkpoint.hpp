// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "blockspec/core/error.hpp"
#include "blockspec/core/hash.hpp"
#include "blockspec/numkernel/tensor.hpp"

namespace blockspec {

/// On-disk layout (all integers little-endian):
///
///   [0, 8)        magic "BSCKPT01"
///   [8, 16)       u64 header length H
///   [16, 16+H)    UTF-8 JSON header
///   [16+H, ...)   tensor blobs, f32, row-major, at header-declared offsets
///
/// Header keys: version (int, required), kind (string), config (object),
/// meta (object), tensors: [{name, shape, offset, count}], where offset is
/// in bytes from the start of the blob region.
inline constexpr char kCheckpointMagic[8] = {'B', 'S', 'C', 'K', 'P', 'T', '0', '1'};
inline constexpr int kCheckpointVersion = 1;

struct TensorRecord {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

struct Container {
  std::string kind;
  nlohmann::json config = nlohmann::json::object();
  nlohmann::json meta = nlohmann::json::object();
  std::vector<TensorRecord> tensors;

  const TensorRecord& find(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return t;
    throw ConfigError("checkpoint has no tensor '" + name + "'");
  }
};

namespace detail {

inline void put_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint64_t get_u64(const unsigned char* b) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

inline void write_f32_le(std::ostream& out, const std::vector<float>& v) {
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * 4));
  } else {
    for (float f : v) {
      auto u = std::bit_cast<std::uint32_t>(f);
      unsigned char b[4] = {static_cast<unsigned char>(u), static_cast<unsigned char>(u >> 8),
                            static_cast<unsigned char>(u >> 16), static_cast<unsigned char>(u >> 24)};
      out.write(reinterpret_cast<const char*>(b), 4);
    }
  }
}

inline float read_f32_le(const unsigned char* b) {
  const std::uint32_t u = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
                          (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  return std::bit_cast<float>(u);
}

}  // namespace detail

inline void write_container(const std::string& path, const Container& c) {
  nlohmann::json header;
  header["version"] = kCheckpointVersion;
  header["kind"] = c.kind;
  header["config"] = c.config;
  header["meta"] = c.meta;
  header["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& t : c.tensors) {
    BLOCKSPEC_CHECK(shape_numel(t.shape) == t.data.size(), DimensionError,
                    "tensor '" + t.name + "' data does not match its shape");
    header["tensors"].push_back({{"name", t.name}, {"shape", t.shape}, {"offset", offset},
                                 {"count", t.data.size()}});
    offset += t.data.size() * 4;
  }
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary);
  BLOCKSPEC_CHECK(out.good(), ConfigError, "cannot open " + path + " for writing");
  out.write(kCheckpointMagic, 8);
  detail::put_u64(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& t : c.tensors) detail::write_f32_le(out, t.data);
  BLOCKSPEC_CHECK(out.good(), ConfigError, "write failed for " + path);
}

inline Container read_container(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  BLOCKSPEC_CHECK(in.good(), ConfigError, "cannot open checkpoint " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  BLOCKSPEC_CHECK(bytes.size() >= 16 && std::memcmp(bytes.data(), kCheckpointMagic, 8) == 0, ConfigError,
                  path + ": not a blockspec checkpoint (bad magic)");
  const std::uint64_t hlen = detail::get_u64(bytes.data() + 8);
  BLOCKSPEC_CHECK(16 + hlen <= bytes.size(), ConfigError, path + ": truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(hlen));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": malformed header: " + e.what());
  }
  BLOCKSPEC_CHECK(header.contains("version"), ConfigError, path + ": header has no version field");
  const int version = header["version"].get<int>();
  BLOCKSPEC_CHECK(version == kCheckpointVersion, ConfigError,
                  path + ": unsupported checkpoint version " + std::to_string(version));
  Container c;
  c.kind = header.value("kind", std::string());
  c.config = header.value("config", nlohmann::json::object());
  c.meta = header.value("meta", nlohmann::json::object());
  const std::size_t blob = 16 + hlen;
  for (const auto& t : header.at("tensors")) {
    TensorRecord r;
    r.name = t.at("name").get<std::string>();
    r.shape = t.at("shape").get<Shape>();
    const auto off = t.at("offset").get<std::uint64_t>();
    const auto count = t.at("count").get<std::uint64_t>();
    BLOCKSPEC_CHECK(count == shape_numel(r.shape), ConfigError, path + ": tensor '" + r.name + "' count/shape mismatch");
    BLOCKSPEC_CHECK(blob + off + count * 4 <= bytes.size(), ConfigError, path + ": tensor '" + r.name + "' truncated");
    r.data.resize(count);
    const unsigned char* p = bytes.data() + blob + off;
    for (std::size_t i = 0; i < count; ++i) r.data[i] = detail::read_f32_le(p + 4 * i);
    c.tensors.push_back(std::move(r));
  }
  return c;
}

/// Identity of a parameter set: config JSON plus every tensor's name, shape and f32 bytes.
inline std::string content_hash(const nlohmann::json& config, const std::vector<TensorRecord>& tensors) {
  Fnv1a h;
  h.update(config.dump());
  for (const auto& t : tensors) {
    h.update(t.name);
    h.update_values(std::span<const std::size_t>(t.shape));
    h.update_values(std::span<const float>(t.data));
  }
  return h.hex();
}

template <typename T>
std::vector<float> to_f32(std::span<const T> v) {
  return std::vector<float>(v.begin(), v.end());
}

template <typename T>
std::vector<T> from_f32(const std::vector<float>& v) {
  return std::vector<T>(v.begin(), v.end());
}

}  // namespace blockspec
