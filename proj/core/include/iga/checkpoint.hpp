// SPDX-License-Identifier: Apache-2.0
//
// Single-file checkpoint bundle. Layout (all integers little-endian):
//
//   magic        8 bytes  "IGACKPT\0"
//   version      u32      kCheckpointVersion
//   real_bytes   u32      4 (float) or 8 (double) for every blob below
//   config_len   u64      followed by config_len bytes of key=value lines
//   blob_count   u32
//   blob         u32 name_len, name, u32 rank, u64 dims[rank],
//                u64 count, count IEEE-754 values
//   checksum     u64      FNV-1a over every preceding byte
//
// Blob names: param/<name>, buffer/<name>, adam.gen.m/<name>,
// adam.gen.v/<name>, adam.disc.m/<name>, adam.disc.v/<name>.
#pragma once

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>

#include "iga/train.hpp"

namespace iga {

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Written to a temporary file and renamed into place.
void save_checkpoint(const std::filesystem::path& path, TrainState& state);
TrainState load_checkpoint(const std::filesystem::path& path);

/// key=value view of the configuration block (for inspection and manifests).
std::map<std::string, std::string> checkpoint_config(const TrainState& state);

}  // namespace iga
