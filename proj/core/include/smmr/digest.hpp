#pragma once

#include <string>
#include <string_view>

namespace smmr {

// Hex-encoded SHA-256 of the exact bytes given.
std::string sha256_hex(std::string_view data);

} // namespace smmr
