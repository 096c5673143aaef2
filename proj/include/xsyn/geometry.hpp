// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <string>

namespace xsyn {

/// Axis-aligned box in pixel coordinates, corner form [x1, y1, x2, y2].
struct Box {
    double x1 = 0.0;
    double y1 = 0.0;
    double x2 = 0.0;
    double y2 = 0.0;

    double width() const { return x2 - x1; }
    double height() const { return y2 - y1; }
    double area() const { return width() * height(); }
    bool well_formed() const { return x1 < x2 && y1 < y2; }

    std::array<double, 4> as_array() const { return {x1, y1, x2, y2}; }
    friend bool operator==(const Box&, const Box&) = default;
};

/// Intersection over union on real-valued areas. Zero when the union is empty.
double iou(const Box& a, const Box& b);

/// Clip a box to [0, width] x [0, height]. The result may be degenerate.
Box clamp_box(const Box& box, double width, double height);

/// Scale both axes independently.
Box scale_box(const Box& box, double sx, double sy);

/// Half-open integer pixel span [x1, x2) x [y1, y2).
struct PixelRect {
    int x1 = 0;
    int y1 = 0;
    int x2 = 0;
    int y2 = 0;

    int width() const { return x2 - x1; }
    int height() const { return y2 - y1; }
    long long area() const { return static_cast<long long>(width()) * height(); }
    bool empty() const { return x2 <= x1 || y2 <= y1; }
    bool contains(int x, int y) const { return x >= x1 && x < x2 && y >= y1 && y < y2; }
    friend bool operator==(const PixelRect&, const PixelRect&) = default;
};

/// Pixels covered by a box: floor of the min corner, ceil of the max corner, clipped to the grid.
PixelRect pixel_span(const Box& box, int width, int height);

Box to_box(const PixelRect& rect);

std::string to_string(const Box& box);

}  // namespace xsyn
