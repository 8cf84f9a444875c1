#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "tvae/config.hpp"
#include "tvae/tensor.hpp"

namespace tvae {

// On-disk layout, all integers little-endian:
//   "TVAE" | u32 version | u64 meta_len | meta (key=value lines)
//   | u32 tensor_count | per tensor: u32 name_len, name, u32 rank,
//     u64 dims[rank], f64 values[numel]
//   | u64 FNV-1a of every preceding byte
struct CheckpointData {
  KeyValues metadata;
  std::vector<std::pair<std::string, Tensor>> tensors;

  const std::string* meta(const std::string& key) const;
  const Tensor* tensor(const std::string& name) const;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Writes to a temporary sibling and renames, so an interrupted write never
// replaces an existing checkpoint.
void write_checkpoint(const std::filesystem::path& path, const CheckpointData& data);
// FileError on unreadable, truncated or corrupt files.
CheckpointData read_checkpoint(const std::filesystem::path& path);

std::string encode_checkpoint(const CheckpointData& data);
CheckpointData decode_checkpoint(const std::string& bytes, const std::string& origin = "checkpoint");

}  // namespace tvae
