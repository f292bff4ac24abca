#pragma once

#include <cstdint>
#include <filesystem>

#include "kdadv/model.hpp"

namespace kdadv {

inline constexpr char kCheckpointMagic[8] = {'K', 'D', 'A', 'D', 'V', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

// Layout (all integers and floats little-endian):
//   magic[8] | u32 version | u32 descriptor_len | descriptor text
//   | u64 architecture hash | u32 channels | f32 mean[channels] | f32 stddev[channels]
//   | u64 value_count | f32 values[value_count] in parameter declaration order
void save_checkpoint(const Model& model, const std::filesystem::path& path);

// Rebuilds the architecture from the stored descriptor.
Model load_checkpoint(const std::filesystem::path& path);

// As above, but rejects the file unless it matches `architecture`.
Model load_checkpoint(const std::filesystem::path& path, const Model& architecture);

// FNV-1a over parameter bytes; used to verify that frozen models stay frozen.
std::uint64_t parameter_checksum(const Model& model);

}  // namespace kdadv
