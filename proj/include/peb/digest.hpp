#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

namespace peb {

using Sha256 = std::array<std::uint8_t, 32>;

Sha256 sha256(std::string_view bytes);
std::string to_hex(const Sha256& digest);
std::string sha256_hex(std::string_view bytes);
bool from_hex(std::string_view hex, Sha256& out);

std::uint32_t crc32(std::string_view bytes);

}  // namespace peb
