// SPDX-License-Identifier: Apache-2.0

#include "xsyn/segmentation.hpp"

#include <algorithm>

namespace xsyn {

std::int64_t mask_area(const Tensor& mask) {
    std::int64_t n = 0;
    for (float v : mask.data())
        n += v > 0.5f ? 1 : 0;
    return n;
}

std::optional<Box> mask_bbox(const Tensor& mask) {
    const int h = static_cast<int>(mask.height());
    const int w = static_cast<int>(mask.width());
    int x1 = w, y1 = h, x2 = -1, y2 = -1;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (mask.at(y, x) > 0.5f) {
                x1 = std::min(x1, x);
                y1 = std::min(y1, y);
                x2 = std::max(x2, x);
                y2 = std::max(y2, y);
            }
    if (x2 < 0)
        return std::nullopt;
    return Box{static_cast<double>(x1), static_cast<double>(y1), static_cast<double>(x2 + 1),
               static_cast<double>(y2 + 1)};
}

SegmentMask make_segment_mask(Tensor mask) {
    SegmentMask m;
    m.area = mask_area(mask);
    m.bbox = mask_bbox(mask).value_or(Box{});
    m.mask = std::move(mask);
    return m;
}

}  // namespace xsyn
