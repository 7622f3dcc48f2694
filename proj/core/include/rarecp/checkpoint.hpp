#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "rarecp/config.hpp"
#include "rarecp/mixture.hpp"
#include "rarecp/training.hpp"

namespace rarecp {

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  RunConfig config;
  TeacherBank teachers;
  RareCpModel model;
};

// Versioned text format: manifest lines, the run config, then every named
// tensor as "tensor <name> <rank> <dims...>" followed by its row-major values.
std::string serialize_checkpoint(const Checkpoint& checkpoint);
Checkpoint parse_checkpoint(std::string_view text);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// 64-bit FNV-1a of the bytes, as 16 hex digits.
std::string fnv1a_hex(std::string_view bytes);
std::string file_hash(const std::filesystem::path& path);

}  // namespace rarecp
