// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "xsyn/tensor.hpp"

// XTEN v1 layout:
//   "XTEN" | u8 version (1) | u8 dtype (1 = float32) | u8 rank | u8 padding (0)
//   rank x u32 little-endian dims | little-endian float32 payload

namespace xsyn::xten {

inline constexpr std::uint8_t kVersion = 1;
inline constexpr std::uint8_t kDtypeFloat32 = 1;

std::vector<std::uint8_t> encode(const Tensor& tensor);

/// Throws ParseError on bad magic, version, dtype, truncated or oversized
/// payload, zero dims, or non-finite values.
Tensor decode(std::span<const std::uint8_t> bytes);

void write_file(const std::filesystem::path& path, const Tensor& tensor);
Tensor read_file(const std::filesystem::path& path);

}  // namespace xsyn::xten
