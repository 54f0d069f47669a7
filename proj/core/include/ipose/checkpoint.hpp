#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ipose/tensor.hpp"

namespace ipose {

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<double> values;

  bool operator==(const NamedTensor&) const = default;
};

/// Serialised model state.
///
/// Byte layout, all integers little-endian:
///   magic        8 bytes  "IPOSECKP"
///   version      u32      kCheckpointVersion
///   config       u32 length + UTF-8 JSON (network configuration)
///   metadata     u32 length + UTF-8 JSON (training metadata)
///   count        u32      number of tensors
///   tensors      count x { u32 name length, name, u32 rank, rank x u64 dims,
///                          prod(dims) x IEEE-754 binary64 }
///   checksum     u64      FNV-1a over every preceding byte
struct Checkpoint {
  std::string config_json;
  std::string metadata_json = "{}";
  std::vector<NamedTensor> tensors;

  const NamedTensor* find(std::string_view name) const;
  bool operator==(const Checkpoint&) const = default;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& checkpoint);
/// Throws DataError on a bad magic, version, checksum, truncation or
/// duplicate tensor names.
Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// 64-bit FNV-1a digest, used for checkpoint integrity and run fingerprints.
std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes);

}  // namespace ipose
