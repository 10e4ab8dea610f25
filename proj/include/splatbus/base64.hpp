#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace splatbus::base64 {

/// Standard alphabet (RFC 4648) with '=' padding.
std::string encode(std::span<const std::uint8_t> bytes);
std::string encode(std::string_view text);

/// Strict decode: rejects whitespace, bad padding and characters outside the
/// alphabet by throwing Error(Errc::malformed).
std::vector<std::uint8_t> decode(std::string_view text);
std::string decode_to_string(std::string_view text);

} // namespace splatbus::base64
