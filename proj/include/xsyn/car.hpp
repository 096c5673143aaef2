// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "xsyn/backend.hpp"
#include "xsyn/segmentation.hpp"
#include "xsyn/tensor.hpp"

// Cross-attention refinement: locate the generated item through its
// attention map, sample point prompts from it, and take the box of the
// segment the prompts select in the generated image.

namespace xsyn::car {

struct PromptSet {
    std::vector<PointPrompt> points;
    Box box;
};

/// Most class-discriminative part of an attention map inside a grounding box.
struct DiscriminativeRegion {
    Tensor mask;  // H x W binary, subset of the box span
    Box box;
    bool fallback = false;  // segmenter found nothing or the map was flat; mask = whole box
};

/// A pixel and its attention value.
struct ActivationSample {
    int x = 0;
    int y = 0;
    float value = 0.0f;

    friend bool operator==(const ActivationSample&, const ActivationSample&) = default;
};

/// Strict weak order used everywhere a ranking of pixels is needed:
/// activation ascending, then row-major position.
bool activation_less(const ActivationSample& a, const ActivationSample& b);

struct SampledPoints {
    std::vector<PointPrompt> points;
    /// A branch ran out of pixels before reaching the requested depth.
    bool truncated = false;
    /// No pixel inside the box lies outside the region.
    bool missing_background = false;
};

struct RefineResult {
    Box box;
    bool fallback = false;  // empty segment; grounding box returned unchanged
};

/// Prompts the segmenter with the attention map (rendered as a one-channel
/// image) and the grounding box, then clips the returned mask to the box.
DiscriminativeRegion discriminative_region(const Tensor& attention, const Box& box,
                                           backends::SegmenterBackend& segmenter);

/// Lower median under `activation_less`. `values` must be non-empty.
ActivationSample median_point(std::span<const ActivationSample> values);

/// Median point sampling: n levels of sort-and-divide over the region's
/// pixels give up to 2^n - 1 foreground points (level order, lower half
/// first), followed by one background point at the lowest activation inside
/// the box but outside the region. n = 0 yields no points.
SampledPoints mps_sample(const DiscriminativeRegion& region, const Tensor& attention, int n);

/// Ablation baseline: the k highest-activation region pixels plus the same
/// background point as MPS.
SampledPoints topk_sample(const DiscriminativeRegion& region, const Tensor& attention, int k);

/// Segments `image` with points + box and returns the tight box of the segment.
RefineResult refine_annotation(const Tensor& image, const PromptSet& prompt, backends::SegmenterBackend& segmenter);

}  // namespace xsyn::car
