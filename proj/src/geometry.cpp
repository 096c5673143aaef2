// SPDX-License-Identifier: Apache-2.0

#include "xsyn/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace xsyn {

double iou(const Box& a, const Box& b) {
    const double ix = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
    const double iy = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
    const double inter = ix * iy;
    const double uni = a.area() + b.area() - inter;
    if (uni <= 0.0)
        return 0.0;
    return inter / uni;
}

Box clamp_box(const Box& box, double width, double height) {
    return {std::clamp(box.x1, 0.0, width), std::clamp(box.y1, 0.0, height),
            std::clamp(box.x2, 0.0, width), std::clamp(box.y2, 0.0, height)};
}

Box scale_box(const Box& box, double sx, double sy) {
    return {box.x1 * sx, box.y1 * sy, box.x2 * sx, box.y2 * sy};
}

PixelRect pixel_span(const Box& box, int width, int height) {
    PixelRect r;
    r.x1 = std::clamp(static_cast<int>(std::floor(box.x1)), 0, width);
    r.y1 = std::clamp(static_cast<int>(std::floor(box.y1)), 0, height);
    r.x2 = std::clamp(static_cast<int>(std::ceil(box.x2)), 0, width);
    r.y2 = std::clamp(static_cast<int>(std::ceil(box.y2)), 0, height);
    return r;
}

Box to_box(const PixelRect& rect) {
    return {static_cast<double>(rect.x1), static_cast<double>(rect.y1),
            static_cast<double>(rect.x2), static_cast<double>(rect.y2)};
}

std::string to_string(const Box& box) {
    std::ostringstream os;
    os << '[' << box.x1 << ", " << box.y1 << ", " << box.x2 << ", " << box.y2 << ']';
    return os.str();
}

}  // namespace xsyn
