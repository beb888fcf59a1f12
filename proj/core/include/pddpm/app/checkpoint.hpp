#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pddpm/nn/param_store.hpp"

namespace pddpm::app {

// On-disk model state: "PDCK", u32 version, 32-byte config hash, channel-order
// contract, metadata JSON, u64 step, then named float32 tensors (parameters
// and both Adam moments), all little-endian, closed by a CRC32 of every
// preceding byte.
struct Checkpoint {
  std::string config_hash;  // 64 hex chars
  std::string contract;
  std::string metadata;     // free-form JSON (architecture, schedule, ...)
  nn::ParamStore params;    // includes Adam moments and the step counter

  bool operator==(const Checkpoint&) const = default;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<unsigned char> encode_checkpoint(const Checkpoint& checkpoint);

// Verifies length and CRC before parsing anything, so a damaged file never
// yields a partial checkpoint. With expected_contract set, a different
// channel-order contract is refused (FormatError::Kind::kContract).
Checkpoint decode_checkpoint(std::span<const unsigned char> bytes,
                             const std::optional<std::string>& expected_contract = std::nullopt);

// Atomic: written to a temporary file, then renamed over `path`.
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path,
                           const std::optional<std::string>& expected_contract = std::nullopt);

}  // namespace pddpm::app
