// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "xsyn/dataset.hpp"
#include "xsyn/rng.hpp"
#include "xsyn/segmentation.hpp"

namespace xsyn::grounding {

/// MOD regenerates every annotated item, ADD paints one new item into an idle region.
enum class Mode { Mod, Add };

struct GroundingEntity {
    std::string text;
    Box box;

    friend bool operator==(const GroundingEntity&, const GroundingEntity&) = default;
};

struct GroundingCondition {
    std::vector<GroundingEntity> entities;
    std::string prompt;
    Mode mode = Mode::Mod;

    friend bool operator==(const GroundingCondition&, const GroundingCondition&) = default;
};

/// Separator between class names in a MOD prompt.
inline constexpr std::string_view kPromptJoiner = ", ";

/// One entity per annotation, prompt = class names joined in annotation order.
/// Throws NoForeground on an empty list.
GroundingCondition build_g_mod(std::span<const data::BoxAnnotation> annotations);

/// Segment boxes eligible to host a new item: the two largest masks (by pixel
/// area, ties by segmenter order) are dropped, boxes below
/// `min_ratio * H * W` are dropped, and the rest must have IoU < d with every
/// annotation. Returned in segmenter order.
std::vector<Box> candidate_idle_regions(const SegmentationResult& seg,
                                        std::span<const data::BoxAnnotation> annotations, double d,
                                        double min_ratio, const data::ImageRecord& image);

/// Uniform choice. Throws NoIdleRegion when empty.
Box select_idle_region(std::span<const Box> candidates, Rng& rng);

/// Group by box area (same half-open intervals as the table), class uniform
/// within the group. An empty group falls back to the nearest non-empty one
/// by distance to its interval, lower group on ties.
std::string select_category_for_region(const Box& box, const data::ClassGroupTable& table, Rng& rng);

GroundingCondition build_g_add(const Box& box, std::string class_name);

std::string to_string(Mode mode);
Mode mode_from_string(std::string_view s);

nlohmann::json to_json(const GroundingCondition& cond);
GroundingCondition condition_from_json(const nlohmann::json& doc);

}  // namespace xsyn::grounding
