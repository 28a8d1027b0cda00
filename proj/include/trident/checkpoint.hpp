#pragma once

// Binary checkpoints: versioned header plus named parameter blocks.
//
//   "TRIDENT\0"            8 bytes magic
//   u32 version
//   u32 n_ways, k_shots, q_queries, image_size, channels
//   u64 config hash
//   u32 block count
//   per block: u32 name length, name bytes, u32 rank, u64 extents[rank]
//   then every block's values as little-endian f64, in block order

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "trident/episodic.hpp"
#include "trident/metatrain.hpp"

namespace trident {

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CheckpointHeader {
  std::uint32_t version = kCheckpointVersion;
  EpisodeSpec episode;
  std::uint64_t config_hash = 0;
};

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view bytes);

/// Written to a temporary file and renamed, so an interrupted save leaves any
/// previous file at `path` intact.
void save_checkpoint(const std::filesystem::path& path, const ModelParams& params, const EpisodeSpec& episode,
                     std::uint64_t config_hash);

CheckpointHeader read_checkpoint_header(const std::filesystem::path& path);

/// Overwrites the values of `params` (which fixes the expected names and
/// shapes). Throws CheckpointError on any mismatch.
CheckpointHeader load_checkpoint(const std::filesystem::path& path, ModelParams& params);

}  // namespace trident
