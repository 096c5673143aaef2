// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "xsyn/geometry.hpp"
#include "xsyn/tensor.hpp"

namespace xsyn {

/// One binary mask (H x W, values 0 or 1) with its pixel count and tight box.
struct SegmentMask {
    Tensor mask;
    std::int64_t area = 0;
    Box bbox;
};

struct SegmentationResult {
    std::vector<SegmentMask> masks;
};

enum class Polarity { Foreground, Background };

/// Point prompt on the pixel grid (column x, row y).
struct PointPrompt {
    int x = 0;
    int y = 0;
    Polarity polarity = Polarity::Foreground;

    friend bool operator==(const PointPrompt&, const PointPrompt&) = default;
};

/// Count of set pixels.
std::int64_t mask_area(const Tensor& mask);

/// Tight half-open box around the set pixels; nullopt for an empty mask.
std::optional<Box> mask_bbox(const Tensor& mask);

/// Builds a SegmentMask with area and bbox derived from the mask itself.
SegmentMask make_segment_mask(Tensor mask);

}  // namespace xsyn
