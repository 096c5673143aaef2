// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "xsyn/tensor.hpp"

namespace xsyn::image {

/// Decode a PNG into an H x W x 3 tensor with values in [0, 1]. Gray and
/// palette images are expanded to RGB, alpha is dropped.
Tensor read_png(const std::filesystem::path& path);

/// 8-bit PNG encoding of an H x W x C tensor (C = 1 or 3) or an H x W map.
/// Values are clamped to [0, 1] and rounded to the nearest level.
std::vector<std::uint8_t> encode_png(const Tensor& image);

void write_png(const std::filesystem::path& path, const Tensor& image);

Tensor resize_bilinear(const Tensor& image, std::uint32_t height, std::uint32_t width);

}  // namespace xsyn::image
