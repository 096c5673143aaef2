// SPDX-License-Identifier: Apache-2.0

#include "xsyn/bom.hpp"

#include <algorithm>
#include <cmath>

#include "xsyn/errors.hpp"
#include "xsyn/grounding.hpp"

namespace xsyn::bom {

namespace {

void blend_scaled(Tensor& t, const OcclusionPlan& plan, const OccluderSpec& occ, int scale) {
    if (t.rank() != 3)
        throw DimensionError("occlusion needs an H x W x C tensor, got " + dims_to_string(t.dims()));
    const int th = static_cast<int>(t.height()), tw = static_cast<int>(t.width());
    const std::uint32_t c = t.channels();
    const LatentBox& o = occ.latent_box;
    if (o.empty() || o.x2 * scale > tw || o.y2 * scale > th)
        throw DimensionError("occluder box lies outside the tensor");

    const float alpha = plan.alpha;
    const float keep = 1.0f - alpha;
    std::vector<float> crop;
    for (const auto& target : plan.targets) {
        if (target.empty())
            continue;
        if (target.width() > o.width() || target.height() > o.height())
            throw DimensionError("perturbed target exceeds the occluder size");
        if (target.x1 < 0 || target.y1 < 0 || target.x2 * scale > tw || target.y2 * scale > th)
            throw DimensionError("perturbed target lies outside the tensor");

        const int w = target.width() * scale, h = target.height() * scale;
        const int tx = target.x1 * scale, ty = target.y1 * scale;
        const int ox = o.x1 * scale, oy = o.y1 * scale;

        crop.resize(static_cast<std::size_t>(w) * h * c);
        for (int dy = 0; dy < h; ++dy)
            for (int dx = 0; dx < w; ++dx)
                for (std::uint32_t k = 0; k < c; ++k)
                    crop[(static_cast<std::size_t>(dy) * w + dx) * c + k] = t.at(oy + dy, ox + dx, k);

        for (int dy = 0; dy < h; ++dy)
            for (int dx = 0; dx < w; ++dx)
                for (std::uint32_t k = 0; k < c; ++k) {
                    float& v = t.at(ty + dy, tx + dx, k);
                    v = crop[(static_cast<std::size_t>(dy) * w + dx) * c + k] * alpha + v * keep;
                }
    }
}

}  // namespace

LatentBox project_to_latent(const Box& box, int downscale, int latent_w, int latent_h) {
    const double s = downscale;
    return pixel_span(Box{box.x1 / s, box.y1 / s, box.x2 / s, box.y2 / s}, latent_w, latent_h);
}

std::optional<OccluderSpec> select_occluder(const SegmentationResult& seg,
                                            std::span<const data::BoxAnnotation> annotations,
                                            const std::optional<Box>& added_box, double d, double min_ratio,
                                            const data::ImageRecord& image, Rng& rng, int downscale) {
    auto candidates = grounding::candidate_idle_regions(seg, annotations, d, min_ratio, image);
    if (added_box)
        std::erase_if(candidates, [&](const Box& b) { return !(iou(b, *added_box) < d); });
    const int lw = image.width / downscale, lh = image.height / downscale;
    // Candidates that vanish on the latent grid cannot act as occluders.
    std::erase_if(candidates, [&](const Box& b) { return project_to_latent(b, downscale, lw, lh).empty(); });
    if (candidates.empty())
        return std::nullopt;
    OccluderSpec occ;
    occ.pixel_box = candidates[rng.uniform_below(candidates.size())];
    occ.latent_box = project_to_latent(occ.pixel_box, downscale, lw, lh);
    return occ;
}

std::optional<LatentBox> perturb_region(const LatentBox& target, const OccluderSpec& occ, int latent_w, int latent_h,
                                        Rng& rng) {
    if (target.empty())
        return std::nullopt;
    LatentBox out;
    out.x1 = static_cast<int>(rng.uniform_int(std::max(target.x1 - occ.width(), 0), target.x2));
    out.y1 = static_cast<int>(rng.uniform_int(std::max(target.y1 - occ.height(), 0), target.y2));
    out.x2 = std::min(out.x1 + occ.width(), latent_w);
    out.y2 = std::min(out.y1 + occ.height(), latent_h);
    return out;
}

OcclusionPlan build_plan(std::span<const Box> targets, const OccluderSpec& occ, float alpha, Period period,
                         Space space, int latent_w, int latent_h, Rng& rng, int downscale, int* skipped) {
    if (!(alpha >= 0.0f && alpha <= 1.0f))
        throw ConfigError("occlusion alpha must lie in [0, 1]");
    OcclusionPlan plan;
    plan.alpha = alpha;
    plan.period = period;
    plan.space = space;
    int missed = 0;
    for (const auto& box : targets) {
        if (auto p = perturb_region(project_to_latent(box, downscale, latent_w, latent_h), occ, latent_w, latent_h, rng))
            plan.targets.push_back(*p);
        else
            ++missed;
    }
    if (skipped)
        *skipped = missed;
    return plan;
}

void recombine_in_place(Tensor& z, const OcclusionPlan& plan, const OccluderSpec& occ) {
    blend_scaled(z, plan, occ, 1);
}

Tensor recombine(const Tensor& z0, const OcclusionPlan& plan, const OccluderSpec& occ) {
    Tensor out = z0;
    recombine_in_place(out, plan, occ);
    return out;
}

Tensor occlude_pixel_space(const Tensor& image, const OcclusionPlan& plan, const OccluderSpec& occ, int downscale) {
    Tensor out = image;
    blend_scaled(out, plan, occ, downscale);
    return out;
}

std::function<void(int, Tensor&)> every_step_hook(OcclusionPlan plan, OccluderSpec occ) {
    return [plan = std::move(plan), occ](int, Tensor& z) { recombine_in_place(z, plan, occ); };
}

std::string to_string(Period p) {
    return p == Period::Final ? "final" : "every-step";
}

std::string to_string(Space s) {
    return s == Space::Latent ? "latent" : "pixel";
}

Period period_from_string(std::string_view s) {
    if (s == "final")
        return Period::Final;
    if (s == "every-step")
        return Period::EveryStep;
    throw ConfigError("unknown occlusion period '" + std::string(s) + "'");
}

Space space_from_string(std::string_view s) {
    if (s == "latent")
        return Space::Latent;
    if (s == "pixel")
        return Space::Pixel;
    throw ConfigError("unknown occlusion space '" + std::string(s) + "'");
}

}  // namespace xsyn::bom
