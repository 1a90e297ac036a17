#pragma once

#include <filesystem>
#include <iosfwd>

#include "ecp/network.hpp"

namespace ecp {

/// Checkpoint layout (all integers little-endian):
///   "ECPN" | u32 version=1 | u32 len | config text (len bytes)
///   then per parameter: u32 name_len | name | u32 rank | u32 extent * rank
///                       | f64 * element_count
/// The config text is NetworkConfig::to_text() with layer_modes set to the
/// realized modes, so a reloaded network uses the same k.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_checkpoint(const Network& net, std::ostream& out);
Network read_checkpoint(std::istream& in);

void save_checkpoint(const Network& net, const std::filesystem::path& path);
/// Throws std::runtime_error naming the path on any malformed input; no
/// partially loaded network is ever returned.
Network load_checkpoint(const std::filesystem::path& path);

}  // namespace ecp
