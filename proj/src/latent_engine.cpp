// SPDX-License-Identifier: Apache-2.0

#include "xsyn/latent_engine.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "xsyn/errors.hpp"
#include "xsyn/rng.hpp"

namespace xsyn::latent {

namespace {

void require_latent_pair(const Tensor& a, const Tensor& b, const InpaintMask& mask, const char* op) {
    if (a.rank() != 3 || a.dims() != b.dims())
        throw DimensionError(std::string(op) + ": latents must share H' x W' x C dims, got " +
                             dims_to_string(a.dims()) + " and " + dims_to_string(b.dims()));
    if (mask.latent.rank() != 2 || mask.latent.height() != a.height() || mask.latent.width() != a.width())
        throw DimensionError(std::string(op) + ": latent mask " + dims_to_string(mask.latent.dims()) +
                             " does not match latent " + dims_to_string(a.dims()));
}

constexpr std::uint64_t kInitStream = 0x696e6974ULL;    // "init"
constexpr std::uint64_t kInputStream = 0x696e7075ULL;   // "inpu"

}  // namespace

InpaintMask inpaint_mask_from_pixels(Tensor pixel, int downscale) {
    if (pixel.rank() != 2 || downscale < 1 || pixel.height() % downscale || pixel.width() % downscale)
        throw DimensionError("pixel mask " + dims_to_string(pixel.dims()) + " is not a multiple of the downscale " +
                             std::to_string(downscale));
    const std::uint32_t lh = pixel.height() / downscale;
    const std::uint32_t lw = pixel.width() / downscale;
    Tensor latent({lh, lw});
    const double cell = static_cast<double>(downscale) * downscale;
    for (std::uint32_t y = 0; y < lh; ++y)
        for (std::uint32_t x = 0; x < lw; ++x) {
            double s = 0.0;
            for (int dy = 0; dy < downscale; ++dy)
                for (int dx = 0; dx < downscale; ++dx)
                    s += pixel.at(y * downscale + dy, x * downscale + dx);
            latent.at(y, x) = static_cast<float>(s / cell);
        }
    return {std::move(pixel), std::move(latent)};
}

InpaintMask make_inpaint_mask(std::span<const Box> generate, std::uint32_t height, std::uint32_t width,
                              int downscale) {
    Tensor pixel({height, width}, 1.0f);
    for (const auto& box : generate) {
        const PixelRect r = pixel_span(box, static_cast<int>(width), static_cast<int>(height));
        for (int y = r.y1; y < r.y2; ++y)
            for (int x = r.x1; x < r.x2; ++x)
                pixel.at(y, x) = 0.0f;
    }
    return inpaint_mask_from_pixels(std::move(pixel), downscale);
}

Tensor make_inpaint_input(const Tensor& z_t, const Tensor& z0_input, const InpaintMask& mask) {
    require_latent_pair(z_t, z0_input, mask, "make_inpaint_input");
    const std::uint32_t h = z_t.height(), w = z_t.width(), c = z_t.channels();
    Tensor out({h, w, 2 * c + 1});
    for (std::uint32_t y = 0; y < h; ++y)
        for (std::uint32_t x = 0; x < w; ++x) {
            const float m = mask.latent.at(y, x);
            for (std::uint32_t k = 0; k < c; ++k) {
                out.at(y, x, k) = z_t.at(y, x, k);
                out.at(y, x, c + k) = z0_input.at(y, x, k) * m;
            }
            out.at(y, x, 2 * c) = m;
        }
    return out;
}

Tensor blend_known_region(const Tensor& z_prev, const Tensor& z_t_input, const InpaintMask& mask) {
    require_latent_pair(z_prev, z_t_input, mask, "blend_known_region");
    const std::uint32_t h = z_prev.height(), w = z_prev.width(), c = z_prev.channels();
    Tensor out = z_prev;
    for (std::uint32_t y = 0; y < h; ++y)
        for (std::uint32_t x = 0; x < w; ++x) {
            const float m = mask.latent.at(y, x);
            if (m == 0.0f)
                continue;
            for (std::uint32_t k = 0; k < c; ++k) {
                if (m == 1.0f)
                    out.at(y, x, k) = z_t_input.at(y, x, k);
                else
                    out.at(y, x, k) = z_prev.at(y, x, k) * (1.0f - m) + z_t_input.at(y, x, k) * m;
            }
        }
    return out;
}

NoiseSchedule::NoiseSchedule(const backends::BackendManifest& manifest) : m_alphas(manifest.alphas_cumprod) {
    if (m_alphas.empty() || static_cast<int>(m_alphas.size()) != manifest.timesteps)
        throw BackendError(BackendError::Kind::Protocol, "BAD_MANIFEST",
                           "schedule has " + std::to_string(m_alphas.size()) + " entries, manifest declares T=" +
                               std::to_string(manifest.timesteps));
    if (backends::schedule_digest(m_alphas) != manifest.schedule_digest)
        throw BackendError(BackendError::Kind::Protocol, "BAD_MANIFEST", "schedule digest does not match constants");
    for (double a : m_alphas)
        if (!(a > 0.0 && a <= 1.0))
            throw BackendError(BackendError::Kind::Protocol, "BAD_MANIFEST", "cumulative alphas must lie in (0, 1]");
}

double NoiseSchedule::alpha_cumprod(int t) const {
    return t < 0 ? 1.0 : m_alphas.at(static_cast<std::size_t>(t));
}

std::vector<int> NoiseSchedule::sampling_timesteps(int steps) const {
    if (steps < 1 || steps > timesteps())
        throw ConfigError("steps must lie in [1, " + std::to_string(timesteps()) + "], got " + std::to_string(steps));
    const int ratio = timesteps() / steps;
    std::vector<int> ts(static_cast<std::size_t>(steps));
    for (int i = 0; i < steps; ++i)
        ts[static_cast<std::size_t>(i)] = (steps - 1 - i) * ratio;
    return ts;
}

Tensor NoiseSchedule::add_noise(const Tensor& z0, int t, std::uint64_t noise_key) const {
    const double ab = alpha_cumprod(t);
    const auto a = static_cast<float>(std::sqrt(ab));
    const auto s = static_cast<float>(std::sqrt(1.0 - ab));
    Tensor out = z0;
    auto data = out.data();
    for (std::size_t i = 0; i < data.size(); ++i)
        data[i] = a * z0[i] + s * gaussian_at(noise_key, i);
    return out;
}

void NoiseSchedule::ddim_step(Tensor& z, const Tensor& eps, int t, int t_prev) const {
    const double ab = alpha_cumprod(t);
    const double ab_prev = alpha_cumprod(t_prev);
    const auto a = static_cast<float>(std::sqrt(ab));
    const auto s = static_cast<float>(std::sqrt(1.0 - ab));
    const auto a_prev = static_cast<float>(std::sqrt(ab_prev));
    const auto s_prev = static_cast<float>(std::sqrt(1.0 - ab_prev));
    auto data = z.data();
    for (std::size_t i = 0; i < data.size(); ++i) {
        const float x0 = (data[i] - s * eps[i]) / a;
        data[i] = a_prev * x0 + s_prev * eps[i];
    }
}

Tensor normalize_map(const Tensor& map) {
    Tensor out = map;
    if (map.empty())
        return out;
    const auto [lo, hi] = std::minmax_element(map.data().begin(), map.data().end());
    const double mn = *lo, mx = *hi;
    auto data = out.data();
    if (!(mx > mn)) {
        std::fill(data.begin(), data.end(), 0.0f);
        return out;
    }
    for (auto& v : data)
        v = static_cast<float>((static_cast<double>(v) - mn) / (mx - mn));
    return out;
}

Tensor upsample_nearest(const Tensor& map, std::uint32_t height, std::uint32_t width) {
    if (map.rank() != 2 || height % map.height() || width % map.width())
        throw DimensionError("cannot upsample " + dims_to_string(map.dims()) + " to " +
                             dims_to_string({height, width}));
    const std::uint32_t fy = height / map.height(), fx = width / map.width();
    Tensor out({height, width});
    for (std::uint32_t y = 0; y < height; ++y)
        for (std::uint32_t x = 0; x < width; ++x)
            out.at(y, x) = map.at(y / fy, x / fx);
    return out;
}

Tensor finalize_attention(const std::vector<double>& sum, std::uint32_t map_h, std::uint32_t map_w,
                          std::uint32_t samples, std::uint32_t height, std::uint32_t width) {
    Tensor mean({map_h, map_w});
    const double n = samples ? static_cast<double>(samples) : 1.0;
    for (std::size_t i = 0; i < sum.size(); ++i)
        mean[i] = static_cast<float>(sum[i] / n);
    return upsample_nearest(normalize_map(mean), height, width);
}

SamplingResult run_sampling(const Tensor& z0_input, const InpaintMask& mask,
                            const grounding::GroundingCondition& cond, const SamplerConfig& cfg,
                            backends::DenoiserBackend& backend, const SamplingHooks& hooks) {
    if (cond.entities.empty())
        throw ConfigError("grounding condition has no entities");
    if (cfg.guidance_scale < 0.0f)
        throw ConfigError("guidance scale must be non-negative");
    if (z0_input.rank() != 3)
        throw DimensionError("input latent must be H' x W' x C, got " + dims_to_string(z0_input.dims()));
    require_latent_pair(z0_input, z0_input, mask, "run_sampling");

    const auto manifest = backend.manifest();
    const NoiseSchedule schedule(manifest);
    const auto timesteps = schedule.sampling_timesteps(cfg.steps);
    const std::uint32_t pixel_h = mask.pixel.height(), pixel_w = mask.pixel.width();

    Tensor z = z0_input;
    fill_gaussian(z.data(), hash_combine(cfg.seed, kInitStream));

    std::vector<std::vector<double>> attn_sum(cond.entities.size());
    std::vector<std::vector<std::uint32_t>> attn_dims(cond.entities.size());
    std::uint32_t attn_samples = 0;

    const int steps = static_cast<int>(timesteps.size());
    for (int i = 0; i < steps; ++i) {
        const int t = timesteps[static_cast<std::size_t>(i)];
        const int t_prev = i + 1 < steps ? timesteps[static_cast<std::size_t>(i + 1)] : -1;

        const Tensor noised = schedule.add_noise(z0_input, t, hash_combine(hash_combine(cfg.seed, kInputStream),
                                                                           static_cast<std::uint64_t>(t)));
        z = blend_known_region(z, noised, mask);
        if (hooks.observe)
            hooks.observe(StepEvent{i, t, z, noised});

        backends::DenoiseRequest req;
        req.latent = make_inpaint_input(z, z0_input, mask);
        req.timestep = t;
        req.prompt = cond.prompt;
        req.entities = cond.entities;
        req.branch = backends::Branch::Conditional;

        backends::DenoiseResponse cond_out, uncond_out;
        try {
            cond_out = backend.denoise(req);
            backends::check_denoise_response(req, cond_out, manifest.capabilities.attention);
            req.branch = backends::Branch::Unconditional;
            req.prompt.clear();
            req.entities.clear();
            uncond_out = backend.denoise(req);
            backends::check_denoise_response(req, uncond_out, false);
        } catch (const BackendError& e) {
            throw BackendError(e.kind(), e.code(), "step " + std::to_string(i) + " (t=" + std::to_string(t) +
                                                       "): " + e.what());
        }

        Tensor eps = uncond_out.noise;
        {
            auto d = eps.data();
            const auto c = cond_out.noise.data();
            for (std::size_t k = 0; k < d.size(); ++k)
                d[k] = d[k] + cfg.guidance_scale * (c[k] - d[k]);
        }

        for (std::size_t e = 0; e < cond_out.attention.size(); ++e) {
            const Tensor& m = cond_out.attention[e];
            if (attn_sum[e].empty()) {
                attn_sum[e].assign(m.size(), 0.0);
                attn_dims[e] = m.dims();
            } else if (attn_dims[e] != m.dims()) {
                throw DimensionError("attention map dims changed between steps for entity " + std::to_string(e));
            }
            for (std::size_t k = 0; k < m.size(); ++k)
                attn_sum[e][k] += m[k];
        }
        if (!cond_out.attention.empty())
            ++attn_samples;

        schedule.ddim_step(z, eps, t, t_prev);
        if (t_prev < 0)
            z = blend_known_region(z, z0_input, mask);
        if (!z.all_finite())
            throw NumericalError(i, "denoising step at t=" + std::to_string(t) + " produced NaN or Inf");
        if (hooks.after_step) {
            hooks.after_step(i, z);
            if (!z.all_finite())
                throw NumericalError(i, "step hook produced NaN or Inf");
        }
    }

    SamplingResult result;
    result.z0 = std::move(z);
    for (std::size_t e = 0; e < cond.entities.size(); ++e) {
        AttentionRecord rec;
        rec.entity = cond.entities[e].text;
        rec.samples = attn_samples;
        if (attn_sum[e].empty())
            rec.map = Tensor({pixel_h, pixel_w}, 0.0f);
        else
            rec.map = finalize_attention(attn_sum[e], attn_dims[e][0], attn_dims[e][1], attn_samples, pixel_h, pixel_w);
        result.attention.push_back(std::move(rec));
    }
    return result;
}

}  // namespace xsyn::latent
