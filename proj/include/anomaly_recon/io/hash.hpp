#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace anomaly_recon::io {

/// Lower-case hex SHA-256 digests.
std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

/// splitmix64-style mix of a base seed with a stream label and index, used to
/// derive independent, reproducible seeds per stage / epoch / volume.
std::uint64_t derive_seed(std::uint64_t base, std::string_view stream, std::uint64_t index = 0);

}  // namespace anomaly_recon::io
