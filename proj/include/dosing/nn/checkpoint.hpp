#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>

#include "dosing/nn/tensor.hpp"

namespace dosing::nn {

/// Binary tensor container, little-endian:
///   "DOSECKPT" | u32 version (=1) | u64 entry count |
///   entries in name order: u32 name length | name bytes | u32 rank | u64 dims[rank] | f64 data[]
/// Doubles are stored as raw IEEE-754 bits, so save/load round-trips exactly.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const ParamSet& params);
ParamSet load_checkpoint(const std::filesystem::path& path);

void write_checkpoint(std::ostream& out, const ParamSet& params);
ParamSet read_checkpoint(std::istream& in);

}  // namespace dosing::nn
