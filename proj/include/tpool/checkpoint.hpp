// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint layout (all integers 32-bit little-endian):
//
//   "TPCK" | version | metadata length | metadata (UTF-8 key = value text)
//   | tensor count | per tensor: name length, name, rank, dims..., float64 LE payload
//   | CRC-32 of every preceding byte
//
// The metadata echoes the training config plus input width and class
// count; loading rebuilds the architecture from it and then overwrites
// every tensor.
#pragma once

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <string_view>

#include "tpool/config.hpp"
#include "tpool/error.hpp"
#include "tpool/model.hpp"
#include "tpool/seqdata.hpp"

namespace tpool {

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::uint32_t crc32_of(std::string_view bytes) {
  return static_cast<std::uint32_t>(
      ::crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

inline std::string checkpoint_metadata(const ModelParams& m) {
  KeyValueConfig kv;
  kv.set("input_dim", std::to_string(m.input_dim));
  kv.set("classes", std::to_string(m.classes));
  write_train_config(m.config, kv);
  std::string text = kv.format();
  // Architecture lines are informational and commented out for the parser.
  std::string arch = m.architecture();
  std::size_t pos = 0;
  while (pos < arch.size()) {
    const std::size_t end = arch.find('\n', pos);
    text += "# " + arch.substr(pos, end - pos) + "\n";
    pos = end + 1;
  }
  return text;
}

inline std::string serialize_model(const ModelParams& m) {
  std::string out = "TPCK";
  detail::put_u32(out, kCheckpointVersion);
  const std::string meta = checkpoint_metadata(m);
  detail::put_u32(out, static_cast<std::uint32_t>(meta.size()));
  out += meta;
  detail::put_u32(out, static_cast<std::uint32_t>(m.params.size()));
  for (const auto& e : m.params) {
    detail::put_u32(out, static_cast<std::uint32_t>(e.name.size()));
    out += e.name;
    detail::put_u32(out, static_cast<std::uint32_t>(e.tensor.shape.size()));
    for (std::size_t dim : e.tensor.shape) detail::put_u32(out, static_cast<std::uint32_t>(dim));
    for (double v : e.tensor.values) {
      const auto bits = std::bit_cast<std::uint64_t>(v);
      detail::put_u32(out, static_cast<std::uint32_t>(bits & 0xFFFFFFFFu));
      detail::put_u32(out, static_cast<std::uint32_t>(bits >> 32));
    }
  }
  detail::put_u32(out, crc32_of(out));
  return out;
}

inline ModelParams deserialize_model(std::string_view bytes) {
  std::size_t pos = 0;
  auto need = [&](std::size_t n) {
    if (bytes.size() < pos + n) throw FormatError("checkpoint truncated at byte " + std::to_string(pos));
  };
  auto u32 = [&] {
    need(4);
    const std::uint32_t v = detail::get_u32(bytes, pos);
    pos += 4;
    return v;
  };
  need(4);
  if (bytes.substr(0, 4) != "TPCK") throw FormatError("not a checkpoint (missing TPCK magic)");
  pos = 4;
  const std::uint32_t version = u32();
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  if (bytes.size() < 8) throw FormatError("checkpoint truncated");
  const std::uint32_t stored_crc = detail::get_u32(bytes, bytes.size() - 4);
  if (crc32_of(bytes.substr(0, bytes.size() - 4)) != stored_crc) {
    // A short file also lands here; report it as truncation when the body cannot parse.
    throw FormatError("checkpoint checksum mismatch (corrupt or truncated file)");
  }
  const std::uint32_t meta_len = u32();
  need(meta_len);
  const auto kv = KeyValueConfig::parse(bytes.substr(pos, meta_len));
  pos += meta_len;
  int input_dim = 0, classes = 0;
  kv.read("input_dim", input_dim);
  kv.read("classes", classes);
  TrainConfig cfg;
  read_train_config(kv, cfg);
  kv.reject_unknown();
  ModelParams m;
  try {
    m = build_model(cfg, input_dim, classes);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint metadata is inconsistent: ") + e.what());
  }
  const std::uint32_t count = u32();
  if (count != m.params.size()) throw FormatError("checkpoint tensor count does not match its architecture");
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = u32();
    need(name_len);
    const std::string name(bytes.substr(pos, name_len));
    pos += name_len;
    Tensor* t = m.params.find(name);
    if (!t) throw FormatError("checkpoint tensor '" + name + "' is not part of the architecture");
    const std::uint32_t rank = u32();
    std::vector<std::size_t> shape(rank);
    for (auto& dim : shape) dim = u32();
    if (shape != t->shape) throw FormatError("checkpoint tensor '" + name + "' has shape " + shape_string(shape));
    need(8 * t->size());
    for (auto& v : t->values) {
      const std::uint64_t lo = detail::get_u32(bytes, pos);
      const std::uint64_t hi = detail::get_u32(bytes, pos + 4);
      v = std::bit_cast<double>(lo | (hi << 32));
      pos += 8;
    }
  }
  if (pos + 4 != bytes.size()) throw FormatError("checkpoint has trailing bytes");
  return m;
}

inline void save_model(const std::filesystem::path& path, const ModelParams& m) {
  detail::write_file(path, serialize_model(m));
}

inline ModelParams load_model(const std::filesystem::path& path) {
  std::string bytes;
  try {
    bytes = detail::read_file(path);
  } catch (const ParseError& e) {
    throw FormatError(e.what());
  }
  return deserialize_model(bytes);
}

}  // namespace tpool
