#pragma once

#include <span>
#include <string>
#include <string_view>

namespace mgan {

std::string sha256_hex(std::span<const unsigned char> bytes);
std::string sha256_hex(std::string_view text);
/// First 16 hex digits of the SHA-256; used for content-addressed ids.
std::string short_id(std::string_view text);

}  // namespace mgan
