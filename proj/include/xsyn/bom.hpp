// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "xsyn/dataset.hpp"
#include "xsyn/latent_engine.hpp"
#include "xsyn/rng.hpp"
#include "xsyn/segmentation.hpp"

// Background occlusion: a background segment (the occluder) is alpha-blended
// over randomly shifted copies of every foreground box, in latent space by
// default, producing the "hidden" latent that is decoded as the final image.

namespace xsyn::bom {

/// Half-open box on the latent grid.
using LatentBox = PixelRect;

/// Covering projection: floor of the min corner, ceil of the max corner, clipped to the grid.
LatentBox project_to_latent(const Box& box, int downscale, int latent_w, int latent_h);

struct OccluderSpec {
    Box pixel_box;
    LatentBox latent_box;

    int width() const { return latent_box.width(); }
    int height() const { return latent_box.height(); }
};

enum class Period { Final, EveryStep };
enum class Space { Latent, Pixel };

struct OcclusionPlan {
    float alpha = 0.3f;
    /// Perturbed latent targets, applied in order.
    std::vector<LatentBox> targets;
    Period period = Period::Final;
    Space space = Space::Latent;
};

/// Uniform choice among idle-region candidates; with `added_box` the
/// candidate must also have IoU < d with the newly added item's box.
/// Returns nullopt when nothing qualifies.
std::optional<OccluderSpec> select_occluder(const SegmentationResult& seg,
                                            std::span<const data::BoxAnnotation> annotations,
                                            const std::optional<Box>& added_box, double d, double min_ratio,
                                            const data::ImageRecord& image, Rng& rng,
                                            int downscale = latent::kDownscale);

/// Random shift of a projected target so that an occluder-sized window
/// still overlaps it:
///   x1' ~ U[max(x1 - w_o, 0), x2),  x2' = min(x1' + w_o, W')
/// and likewise for y. Returns nullopt for an empty target.
std::optional<LatentBox> perturb_region(const LatentBox& target, const OccluderSpec& occ, int latent_w, int latent_h,
                                        Rng& rng);

/// Projects and perturbs every target box. Empty projections are skipped and counted.
OcclusionPlan build_plan(std::span<const Box> targets, const OccluderSpec& occ, float alpha, Period period,
                         Space space, int latent_w, int latent_h, Rng& rng, int downscale = latent::kDownscale,
                         int* skipped = nullptr);

/// For each target in order: target = occluder_crop * alpha + target * (1 - alpha),
/// with the occluder crop taken top-left aligned at the target's size from
/// the tensor as updated by earlier targets. Everything else is untouched.
void recombine_in_place(Tensor& z, const OcclusionPlan& plan, const OccluderSpec& occ);
Tensor recombine(const Tensor& z0, const OcclusionPlan& plan, const OccluderSpec& occ);

/// Same blend on an H x W x C image, with latent geometry scaled by `downscale`.
Tensor occlude_pixel_space(const Tensor& image, const OcclusionPlan& plan, const OccluderSpec& occ,
                           int downscale = latent::kDownscale);

/// Step hook that occludes the working latent after every denoising step.
std::function<void(int, Tensor&)> every_step_hook(OcclusionPlan plan, OccluderSpec occ);

std::string to_string(Period p);
std::string to_string(Space s);
Period period_from_string(std::string_view s);
Space space_from_string(std::string_view s);

}  // namespace xsyn::bom
