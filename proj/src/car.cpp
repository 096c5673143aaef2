// SPDX-License-Identifier: Apache-2.0

#include "xsyn/car.hpp"

#include <algorithm>
#include <deque>
#include <optional>

#include "xsyn/errors.hpp"

namespace xsyn::car {

namespace {

PixelRect box_span(const Box& box, const Tensor& map) {
    return pixel_span(box, static_cast<int>(map.width()), static_cast<int>(map.height()));
}

std::vector<ActivationSample> region_samples(const DiscriminativeRegion& region, const Tensor& attention) {
    std::vector<ActivationSample> out;
    const PixelRect r = box_span(region.box, attention);
    for (int y = r.y1; y < r.y2; ++y)
        for (int x = r.x1; x < r.x2; ++x)
            if (region.mask.at(y, x) > 0.5f)
                out.push_back({x, y, attention.at(y, x)});
    return out;
}

std::optional<ActivationSample> background_point(const DiscriminativeRegion& region, const Tensor& attention) {
    std::optional<ActivationSample> best;
    const PixelRect r = box_span(region.box, attention);
    for (int y = r.y1; y < r.y2; ++y)
        for (int x = r.x1; x < r.x2; ++x) {
            if (region.mask.at(y, x) > 0.5f)
                continue;
            const ActivationSample s{x, y, attention.at(y, x)};
            if (!best || activation_less(s, *best))
                best = s;
        }
    return best;
}

void append_background(SampledPoints& out, const DiscriminativeRegion& region, const Tensor& attention) {
    if (auto bg = background_point(region, attention))
        out.points.push_back({bg->x, bg->y, Polarity::Background});
    else
        out.missing_background = true;
}

void check_inputs(const DiscriminativeRegion& region, const Tensor& attention) {
    if (attention.rank() != 2)
        throw DimensionError("attention map must be H x W, got " + dims_to_string(attention.dims()));
    if (region.mask.dims() != attention.dims())
        throw DimensionError("region mask " + dims_to_string(region.mask.dims()) + " does not match attention map " +
                             dims_to_string(attention.dims()));
}

}  // namespace

bool activation_less(const ActivationSample& a, const ActivationSample& b) {
    if (a.value != b.value)
        return a.value < b.value;
    if (a.y != b.y)
        return a.y < b.y;
    return a.x < b.x;
}

DiscriminativeRegion discriminative_region(const Tensor& attention, const Box& box,
                                           backends::SegmenterBackend& segmenter) {
    if (attention.rank() != 2)
        throw DimensionError("attention map must be H x W, got " + dims_to_string(attention.dims()));
    const PixelRect span = box_span(box, attention);

    DiscriminativeRegion region;
    region.box = box;
    region.mask = Tensor(attention.dims(), 0.0f);

    bool flat = true;
    if (!span.empty()) {
        const float first = attention.at(span.y1, span.x1);
        for (int y = span.y1; y < span.y2 && flat; ++y)
            for (int x = span.x1; x < span.x2; ++x)
                if (attention.at(y, x) != first) {
                    flat = false;
                    break;
                }
    }

    std::int64_t kept = 0;
    if (!flat) {
        backends::SegmentRequest req;
        req.image = Tensor({attention.height(), attention.width(), 1},
                           std::vector<float>(attention.data().begin(), attention.data().end()));
        req.mode = backends::SegmentMode::Prompt;
        req.box = box;
        const auto res = segmenter.segment(req);
        backends::check_segment_response(req, res);
        const Tensor& m = res.masks.front().mask;
        for (int y = span.y1; y < span.y2; ++y)
            for (int x = span.x1; x < span.x2; ++x)
                if (m.at(y, x) > 0.5f) {
                    region.mask.at(y, x) = 1.0f;
                    ++kept;
                }
    }

    if (kept == 0) {
        region.fallback = true;
        for (int y = span.y1; y < span.y2; ++y)
            for (int x = span.x1; x < span.x2; ++x)
                region.mask.at(y, x) = 1.0f;
    }
    return region;
}

ActivationSample median_point(std::span<const ActivationSample> values) {
    if (values.empty())
        throw Error("median_point: empty input");
    std::vector<ActivationSample> sorted(values.begin(), values.end());
    const std::size_t k = (sorted.size() - 1) / 2;
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(k), sorted.end(), activation_less);
    return sorted[k];
}

SampledPoints mps_sample(const DiscriminativeRegion& region, const Tensor& attention, int n) {
    check_inputs(region, attention);
    if (n < 0)
        throw ConfigError("division count must be non-negative");
    SampledPoints out;
    if (n == 0)
        return out;

    auto samples = region_samples(region, attention);
    std::sort(samples.begin(), samples.end(), activation_less);

    // Each level splits every range of the sorted list at its lower median;
    // the median itself belongs to neither half.
    struct Range {
        std::size_t lo, hi;
    };
    std::vector<Range> level{{0, samples.size()}};
    for (int depth = 0; depth < n; ++depth) {
        std::vector<Range> next;
        for (const auto& r : level) {
            if (r.hi <= r.lo) {
                out.truncated = true;
                continue;
            }
            const std::size_t mid = r.lo + (r.hi - r.lo - 1) / 2;
            out.points.push_back({samples[mid].x, samples[mid].y, Polarity::Foreground});
            next.push_back({r.lo, mid});
            next.push_back({mid + 1, r.hi});
        }
        level = std::move(next);
    }

    append_background(out, region, attention);
    return out;
}

SampledPoints topk_sample(const DiscriminativeRegion& region, const Tensor& attention, int k) {
    check_inputs(region, attention);
    if (k < 1)
        throw ConfigError("top-k needs k >= 1");
    auto samples = region_samples(region, attention);
    auto higher = [](const ActivationSample& a, const ActivationSample& b) {
        if (a.value != b.value)
            return a.value > b.value;
        if (a.y != b.y)
            return a.y < b.y;
        return a.x < b.x;
    };
    std::sort(samples.begin(), samples.end(), higher);
    SampledPoints out;
    const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(k), samples.size());
    out.truncated = take < static_cast<std::size_t>(k);
    for (std::size_t i = 0; i < take; ++i)
        out.points.push_back({samples[i].x, samples[i].y, Polarity::Foreground});
    append_background(out, region, attention);
    return out;
}

RefineResult refine_annotation(const Tensor& image, const PromptSet& prompt, backends::SegmenterBackend& segmenter) {
    if (!prompt.box.well_formed())
        throw Error("refine_annotation: malformed grounding box " + to_string(prompt.box));
    backends::SegmentRequest req;
    req.image = image;
    req.mode = backends::SegmentMode::Prompt;
    req.box = prompt.box;
    req.points = prompt.points;
    const auto res = segmenter.segment(req);
    backends::check_segment_response(req, res);
    if (auto bb = mask_bbox(res.masks.front().mask))
        return {*bb, false};
    return {clamp_box(prompt.box, image.width(), image.height()), true};
}

}  // namespace xsyn::car
