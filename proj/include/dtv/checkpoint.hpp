#pragma once

// Checkpoint container:
//   "DTVC" | u16 version | u32 header length | JSON header | f32 blocks
// The JSON header carries the model config and the (name, shape) of every
// parameter block in file order. All integers and floats are little-endian.

#include "dtv/model.hpp"

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace dtv {

inline constexpr char kCheckpointMagic[4] = {'D', 'T', 'V', 'C'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<char> serialize_checkpoint(const ModelParams& params);
ModelParams deserialize_checkpoint(const std::vector<char>& bytes);

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params);
ModelParams load_checkpoint(const std::filesystem::path& path);

/// 64-bit FNV-1a over the serialized checkpoint; ties an index to the
/// weights it was built with.
std::uint64_t checkpoint_fingerprint(const ModelParams& params);

std::uint64_t fnv1a64(const char* data, std::size_t size);

}  // namespace dtv
