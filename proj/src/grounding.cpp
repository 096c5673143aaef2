// SPDX-License-Identifier: Apache-2.0

#include "xsyn/grounding.hpp"

#include <algorithm>
#include <numeric>

#include "xsyn/errors.hpp"

namespace xsyn::grounding {

using nlohmann::json;

GroundingCondition build_g_mod(std::span<const data::BoxAnnotation> annotations) {
    if (annotations.empty())
        throw NoForeground();
    GroundingCondition cond;
    cond.mode = Mode::Mod;
    for (const auto& a : annotations) {
        if (!cond.prompt.empty())
            cond.prompt += kPromptJoiner;
        cond.prompt += a.class_name;
        cond.entities.push_back({a.class_name, a.box});
    }
    return cond;
}

std::vector<Box> candidate_idle_regions(const SegmentationResult& seg,
                                        std::span<const data::BoxAnnotation> annotations, double d,
                                        double min_ratio, const data::ImageRecord& image) {
    if (seg.masks.size() < 3)
        return {};

    std::vector<std::size_t> order(seg.masks.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return seg.masks[a].area > seg.masks[b].area; });
    const std::size_t largest[2] = {order[0], order[1]};

    const double min_area = min_ratio * image.area();
    std::vector<Box> out;
    for (std::size_t k = 0; k < seg.masks.size(); ++k) {
        if (k == largest[0] || k == largest[1])
            continue;
        const Box& box = seg.masks[k].bbox;
        if (!box.well_formed() || box.area() < min_area)
            continue;
        if (box == seg.masks[largest[0]].bbox || box == seg.masks[largest[1]].bbox)
            continue;
        const bool clear = std::all_of(annotations.begin(), annotations.end(),
                                       [&](const data::BoxAnnotation& a) { return iou(box, a.box) < d; });
        if (clear)
            out.push_back(box);
    }
    return out;
}

Box select_idle_region(std::span<const Box> candidates, Rng& rng) {
    if (candidates.empty())
        throw NoIdleRegion();
    return candidates[rng.uniform_below(candidates.size())];
}

std::string select_category_for_region(const Box& box, const data::ClassGroupTable& table, Rng& rng) {
    const double area = box.area();
    const int home = table.group_for_area(area);
    int chosen = -1;
    if (!table.groups[home].empty()) {
        chosen = home;
    } else {
        auto distance = [&](int g) {
            const double lo = g == 0 ? 0.0 : (g == 1 ? table.lo : table.hi);
            const double hi = g == 0 ? table.lo : (g == 1 ? table.hi : std::numeric_limits<double>::infinity());
            if (area < lo)
                return lo - area;
            if (area >= hi)
                return area - hi;
            return 0.0;
        };
        double best = std::numeric_limits<double>::infinity();
        for (int g = 0; g < 3; ++g)
            if (!table.groups[g].empty() && distance(g) < best) {
                best = distance(g);
                chosen = g;
            }
    }
    if (chosen < 0)
        throw ConfigError("every class group is empty");
    const auto& group = table.groups[chosen];
    return group[rng.uniform_below(group.size())];
}

GroundingCondition build_g_add(const Box& box, std::string class_name) {
    GroundingCondition cond;
    cond.mode = Mode::Add;
    cond.prompt = class_name;
    cond.entities.push_back({std::move(class_name), box});
    return cond;
}

std::string to_string(Mode mode) {
    return mode == Mode::Mod ? "mod" : "add";
}

Mode mode_from_string(std::string_view s) {
    if (s == "mod")
        return Mode::Mod;
    if (s == "add")
        return Mode::Add;
    throw ConfigError("unknown grounding mode '" + std::string(s) + "'");
}

json to_json(const GroundingCondition& cond) {
    json entities = json::array();
    for (const auto& e : cond.entities)
        entities.push_back({{"text", e.text}, {"box", e.box.as_array()}});
    return {{"mode", to_string(cond.mode)}, {"prompt", cond.prompt}, {"entities", entities}};
}

GroundingCondition condition_from_json(const json& doc) {
    try {
        GroundingCondition cond;
        cond.mode = mode_from_string(doc.at("mode").get<std::string>());
        cond.prompt = doc.at("prompt").get<std::string>();
        for (const auto& e : doc.at("entities")) {
            const auto b = e.at("box").get<std::array<double, 4>>();
            cond.entities.push_back({e.at("text").get<std::string>(), {b[0], b[1], b[2], b[3]}});
        }
        if (cond.mode == Mode::Add && cond.entities.size() != 1)
            throw ParseError("ADD grounding condition must hold exactly one entity");
        return cond;
    } catch (const json::exception& e) {
        throw ParseError(std::string("grounding condition: ") + e.what());
    }
}

}  // namespace xsyn::grounding
