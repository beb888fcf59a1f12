#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace pddpm {

using Sha256Digest = std::array<unsigned char, 32>;

Sha256Digest sha256(std::span<const unsigned char> bytes);
Sha256Digest sha256(std::string_view text);
std::string to_hex(std::span<const unsigned char> bytes);
std::string sha256_hex(std::span<const unsigned char> bytes);
std::string sha256_hex(std::string_view text);
// Throws ArgumentError on malformed input.
Sha256Digest digest_from_hex(std::string_view hex);

std::uint32_t crc32(std::span<const unsigned char> bytes);

}  // namespace pddpm
