// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <tuple>
#include <vector>

#include "xsyn/car.hpp"
#include "xsyn/geometry.hpp"
#include "xsyn/rng.hpp"
#include "xsyn/tensor.hpp"

// Brute-force reference implementations shared by the unit and acceptance tests.
namespace xsyn::oracle {

inline auto rank_key(const car::ActivationSample& s) {
    return std::make_tuple(s.value, s.y, s.x);
}

/// Median by counting: the element with exactly floor((k-1)/2) elements below it.
inline car::ActivationSample median_by_rank(const std::vector<car::ActivationSample>& v) {
    const std::size_t want = (v.size() - 1) / 2;
    for (const auto& a : v) {
        std::size_t below = 0;
        for (const auto& b : v)
            below += rank_key(b) < rank_key(a);
        if (below == want)
            return a;
    }
    return v.front();
}

/// Sort-and-recurse on copies; collects medians per depth, then emits them level by level.
inline void mps_recurse(const std::vector<car::ActivationSample>& v, int depth, int n,
                        std::vector<std::vector<car::ActivationSample>>& levels) {
    if (depth == n || v.empty())
        return;
    const auto med = median_by_rank(v);
    levels[depth].push_back(med);
    std::vector<car::ActivationSample> lower, upper;
    for (const auto& s : v) {
        if (rank_key(s) < rank_key(med))
            lower.push_back(s);
        else if (rank_key(med) < rank_key(s))
            upper.push_back(s);
    }
    mps_recurse(lower, depth + 1, n, levels);
    mps_recurse(upper, depth + 1, n, levels);
}

inline std::vector<PointPrompt> mps(const Tensor& mask, const Box& box, const Tensor& attention, int n) {
    std::vector<PointPrompt> out;
    if (n == 0)
        return out;
    const PixelRect r = pixel_span(box, static_cast<int>(attention.width()), static_cast<int>(attention.height()));
    std::vector<car::ActivationSample> region;
    bool have_bg = false;
    car::ActivationSample bg;
    for (int y = r.y1; y < r.y2; ++y)
        for (int x = r.x1; x < r.x2; ++x) {
            const car::ActivationSample s{x, y, attention.at(y, x)};
            if (mask.at(y, x) > 0.5f) {
                region.push_back(s);
            } else if (!have_bg || rank_key(s) < rank_key(bg)) {
                bg = s;
                have_bg = true;
            }
        }
    std::vector<std::vector<car::ActivationSample>> levels(static_cast<std::size_t>(n));
    mps_recurse(region, 0, n, levels);
    for (const auto& level : levels)
        for (const auto& s : level)
            out.push_back({s.x, s.y, Polarity::Foreground});
    if (have_bg)
        out.push_back({bg.x, bg.y, Polarity::Background});
    return out;
}

/// Random H x W map with values drawn from a small alphabet (ties likely) or continuous.
inline Tensor random_map(Rng& rng, std::uint32_t h, std::uint32_t w, bool ties) {
    Tensor m({h, w});
    for (auto& v : m.data())
        v = ties ? static_cast<float>(rng.uniform_below(6)) / 5.0f : static_cast<float>(rng.uniform01());
    return m;
}

}  // namespace xsyn::oracle

namespace xsyn::oracle {

/// Sequential alpha blend using a full snapshot of the tensor before each target.
inline Tensor recombine_reference(const Tensor& z0, const std::vector<PixelRect>& targets, const PixelRect& occ,
                                  float alpha, int scale = 1) {
    Tensor z = z0;
    for (const auto& t : targets) {
        const Tensor snap = z;
        for (int y = t.y1 * scale; y < t.y2 * scale; ++y)
            for (int x = t.x1 * scale; x < t.x2 * scale; ++x)
                for (std::uint32_t c = 0; c < z.channels(); ++c) {
                    const float o = snap.at(occ.y1 * scale + (y - t.y1 * scale), occ.x1 * scale + (x - t.x1 * scale), c);
                    z.at(y, x, c) = o * alpha + snap.at(y, x, c) * (1.0f - alpha);
                }
    }
    return z;
}

/// Closed-interval overlap: boxes that share an edge count as overlapping.
inline bool overlaps_closed(const PixelRect& a, const PixelRect& b) {
    return a.x1 <= b.x2 && b.x1 <= a.x2 && a.y1 <= b.y2 && b.y1 <= a.y2;
}

}  // namespace xsyn::oracle
