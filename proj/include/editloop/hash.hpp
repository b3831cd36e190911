#pragma once

#include <string>
#include <string_view>

namespace editloop {

/// Lowercase hex SHA-256 (64 chars).
std::string sha256_hex(std::string_view data);

std::string base64_encode(std::string_view data);
std::string base64_decode(std::string_view text);

}  // namespace editloop
