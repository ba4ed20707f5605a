#pragma once

#include <filesystem>

#include "m3sr/network.hpp"

namespace m3sr {

// Checkpoint layout, little-endian:
//   "M3CK", u32 version (1),
//   u32 length + model config text (model_config_text),
//   u32 tensor count, then per tensor: u32 name length, name (dotted path),
//     u32 rank, rank x u32 extents, float32 values,
//   u64 FNV-1a checksum of every preceding byte.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const Model<float>& model, const std::filesystem::path& path);
// Rebuilds the model from the stored config and fills every parameter by
// name. Throws BadMagicError, VersionMismatchError, TruncatedPayloadError,
// ChecksumError, or FormatError when names or shapes disagree.
Model<float> load_checkpoint(const std::filesystem::path& path);

}  // namespace m3sr
