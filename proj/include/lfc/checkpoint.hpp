#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lfc/segnet.hpp"

namespace lfc {

// Binary branch snapshot. Layout: "LFC1" magic, config block, role byte, then
// named parameter arrays and named BN statistics arrays, every numeric payload
// little-endian double precision behind an explicit shape header. Round trips
// are bit-exact.
std::vector<std::uint8_t> serialize_branch(ModelBranch& branch);
ModelBranch deserialize_branch(const std::vector<std::uint8_t>& bytes);

void save_branch(ModelBranch& branch, const std::filesystem::path& path);
ModelBranch load_branch(const std::filesystem::path& path);

// Byte offset of the role field, fixed by the format.
std::size_t checkpoint_role_offset();

// FNV-1a content fingerprint used by logs and tests.
std::uint64_t hash_bytes(const std::vector<std::uint8_t>& bytes);
std::uint64_t hash_file(const std::filesystem::path& path);

}  // namespace lfc
