// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "xsyn/backend.hpp"
#include "xsyn/grounding.hpp"
#include "xsyn/tensor.hpp"

namespace xsyn::latent {

/// Pixel-to-latent spatial ratio (512 -> 64).
inline constexpr int kDownscale = 8;

/// Inpainting mask. 1 marks the known region that is copied from the input,
/// 0 the region the denoiser repaints. `latent` is the average-pooled
/// `pixel` mask, so edge cells may be fractional.
struct InpaintMask {
    Tensor pixel;   // H x W
    Tensor latent;  // H' x W'
};

/// Known region = everything outside the union of `generate` boxes.
InpaintMask make_inpaint_mask(std::span<const Box> generate, std::uint32_t height, std::uint32_t width,
                              int downscale = kDownscale);

/// Average-pools a pixel mask. Pixel dims must be multiples of `downscale`.
InpaintMask inpaint_mask_from_pixels(Tensor pixel, int downscale = kDownscale);

/// Concat(z_t, z0_input * m, m) along channels: H' x W' x (2C + 1).
Tensor make_inpaint_input(const Tensor& z_t, const Tensor& z0_input, const InpaintMask& mask);

/// z_prev * (1 - m) + z_t_input * m with the mask broadcast over channels.
/// Cells with m == 0 or m == 1 are copied, never mixed, so the known region is
/// reproduced bit-exactly and the repainted region never reads the input.
Tensor blend_known_region(const Tensor& z_prev, const Tensor& z_t_input, const InpaintMask& mask);

/// Cumulative-alpha schedule taken from a backend manifest. The engine holds
/// no model constants of its own.
class NoiseSchedule {
public:
    explicit NoiseSchedule(const backends::BackendManifest& manifest);

    int timesteps() const { return static_cast<int>(m_alphas.size()); }
    double alpha_cumprod(int t) const;

    /// Evenly spaced timesteps, largest first: (steps-1)*r, ..., r, 0 with r = T / steps.
    std::vector<int> sampling_timesteps(int steps) const;

    /// sqrt(a_t) * z0 + sqrt(1 - a_t) * eps with eps drawn from stream `noise_key`.
    Tensor add_noise(const Tensor& z0, int t, std::uint64_t noise_key) const;

    /// Deterministic DDIM update from t to t_prev (t_prev < 0 means the clean end).
    void ddim_step(Tensor& z, const Tensor& eps, int t, int t_prev) const;

private:
    std::vector<double> m_alphas;
};

struct SamplerConfig {
    int steps = 50;
    float guidance_scale = 7.5f;
    /// Per-run key; the pipeline derives it from (seed, image_id).
    std::uint64_t seed = 0;
};

/// Cross-attention map of one grounding entity averaged over denoiser calls.
struct AttentionRecord {
    std::string entity;
    Tensor map;  // H x W, in [0, 1] once finalized
    std::uint32_t samples = 0;
};

struct StepEvent {
    int index;     // 0 .. steps-1 in execution order
    int timestep;  // schedule timestep t
    const Tensor& working;        // latent after known-region re-injection
    const Tensor& noised_input;   // z_t^input
};

struct SamplingHooks {
    /// Called after the known region has been re-injected, before denoising.
    std::function<void(const StepEvent&)> observe;
    /// Called with the latent each step produces (the last step's output is z_0).
    std::function<void(int index, Tensor& latent)> after_step;
};

struct SamplingResult {
    Tensor z0;
    std::vector<AttentionRecord> attention;
};

/// Text-grounded inpainting loop: re-inject the noised known region, query
/// the conditional and unconditional branches, mix with classifier-free
/// guidance, take a DDIM step, accumulate attention. The known region is
/// pasted from `z0_input` once more after the final step.
SamplingResult run_sampling(const Tensor& z0_input, const InpaintMask& mask,
                            const grounding::GroundingCondition& cond, const SamplerConfig& cfg,
                            backends::DenoiserBackend& backend, const SamplingHooks& hooks = {});

/// Mean over `samples`, min-max normalised (constant maps become all zeros),
/// then nearest-neighbour upsampled to height x width.
Tensor finalize_attention(const std::vector<double>& sum, std::uint32_t map_h, std::uint32_t map_w,
                          std::uint32_t samples, std::uint32_t height, std::uint32_t width);

/// Min-max normalisation to [0, 1]; constant input gives all zeros.
Tensor normalize_map(const Tensor& map);

Tensor upsample_nearest(const Tensor& map, std::uint32_t height, std::uint32_t width);

}  // namespace xsyn::latent
