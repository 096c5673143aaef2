// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace xsyn {

std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_hex(std::string_view text);
std::string sha256_file(const std::filesystem::path& path);

std::string base64_encode(std::span<const std::uint8_t> bytes);

/// Strict decoding: throws ParseError on characters outside the alphabet,
/// bad length, or misplaced padding.
std::vector<std::uint8_t> base64_decode(std::string_view text);

}  // namespace xsyn
