// SPDX-License-Identifier: Apache-2.0

#include <bit>
#include <cmath>
#include <cstdint>

#include "doctest.h"
#include "golden.hpp"
#include "xsyn/errors.hpp"
#include "xsyn/latent_engine.hpp"
#include "xsyn/mock_backends.hpp"
#include "xsyn/rng.hpp"

using namespace xsyn;
using namespace xsyn::latent;

namespace {

bool same_bits(float a, float b) {
    return std::bit_cast<std::uint32_t>(a) == std::bit_cast<std::uint32_t>(b);
}

Tensor source_latent(std::uint32_t h, std::uint32_t w, std::uint64_t key = 11) {
    Tensor z({h, w, 4});
    fill_gaussian(z.data(), key);
    for (auto& v : z.data())
        v *= 0.5f;
    return z;
}

grounding::GroundingCondition knife(const Box& box) {
    return grounding::build_g_add(box, "Knife");
}

// Returns the unconditional output for both branches, with attention on the
// conditional one.
class UncondOnly final : public backends::DenoiserBackend {
public:
    explicit UncondOnly(std::shared_ptr<backends::DenoiserBackend> inner, float cond_offset)
        : m_inner(std::move(inner)), m_offset(cond_offset) {}
    backends::BackendManifest manifest() override { return m_inner->manifest(); }
    backends::DenoiseResponse denoise(const backends::DenoiseRequest& request) override {
        auto r = request;
        r.branch = backends::Branch::Unconditional;
        r.prompt.clear();
        r.entities.clear();
        auto out = m_inner->denoise(r);
        if (request.branch == backends::Branch::Conditional) {
            out.attention = m_inner->denoise(request).attention;
            for (auto& v : out.noise.data())
                v += m_offset;
        }
        return out;
    }

private:
    std::shared_ptr<backends::DenoiserBackend> m_inner;
    float m_offset;
};

}  // namespace

TEST_CASE("inpaint mask: 1 is known, pooling gives fractional edges") {
    const std::vector<Box> gen{{16, 16, 48, 48}};
    const auto m = make_inpaint_mask(gen, 64, 64);
    CHECK(m.pixel.dims() == std::vector<std::uint32_t>{64, 64});
    CHECK(m.latent.dims() == std::vector<std::uint32_t>{8, 8});
    CHECK(m.pixel.at(0, 0) == 1.0f);
    CHECK(m.pixel.at(16, 16) == 0.0f);
    CHECK(m.pixel.at(47, 47) == 0.0f);
    CHECK(m.pixel.at(48, 48) == 1.0f);
    CHECK(m.latent.at(2, 2) == 0.0f);
    CHECK(m.latent.at(1, 1) == 1.0f);

    const std::vector<Box> odd{{4, 0, 8, 8}};
    const auto half = make_inpaint_mask(odd, 8, 16);
    CHECK(half.latent.at(0, 0) == 0.5f);
    CHECK(half.latent.at(0, 1) == 1.0f);
    CHECK_THROWS_AS(inpaint_mask_from_pixels(Tensor({10, 16}, 1.0f)), DimensionError);
}

TEST_CASE("make_inpaint_input layout is [z_t, z0 * m, m]") {
    const auto m = make_inpaint_mask(std::vector<Box>{{0, 0, 32, 64}}, 64, 64);
    const auto z = source_latent(8, 8, 1), z0 = source_latent(8, 8, 2);
    const auto in = make_inpaint_input(z, z0, m);
    CHECK(in.dims() == std::vector<std::uint32_t>{8, 8, 9});
    for (std::uint32_t y = 0; y < 8; ++y)
        for (std::uint32_t x = 0; x < 8; ++x) {
            const float mv = x < 4 ? 0.0f : 1.0f;
            CHECK(in.at(y, x, 8) == mv);
            for (std::uint32_t c = 0; c < 4; ++c) {
                CHECK(in.at(y, x, c) == z.at(y, x, c));
                CHECK(in.at(y, x, 4 + c) == z0.at(y, x, c) * mv);
            }
        }
    CHECK_THROWS_AS(make_inpaint_input(z, source_latent(8, 4), m), DimensionError);
}

TEST_CASE("blend_known_region: examples") {
    auto m = make_inpaint_mask(std::vector<Box>{{0, 0, 4, 8}}, 8, 16);  // latent [[0.5, 1]]
    Tensor prev({1, 2, 1}, std::vector<float>{2.0f, 2.0f});
    Tensor input({1, 2, 1}, std::vector<float>{4.0f, 4.0f});
    const auto out = blend_known_region(prev, input, m);
    CHECK(out[0] == 3.0f);
    CHECK(out[1] == 4.0f);
    m.latent = Tensor({1, 2}, std::vector<float>{0.0f, 0.25f});
    const auto q = blend_known_region(prev, input, m);
    CHECK(q[0] == 2.0f);
    CHECK(q[1] == 2.5f);
}

TEST_CASE("blend_known_region copies binary cells exactly even for non-finite inputs") {
    Rng rng(4);
    for (int trial = 0; trial < 200; ++trial) {
        InpaintMask m;
        m.latent = Tensor({4, 4});
        for (auto& v : m.latent.data())
            v = static_cast<float>(rng.uniform_below(2));
        const auto prev = source_latent(4, 4, rng.next());
        auto input = source_latent(4, 4, rng.next());
        // Poison the repainted cells of the input: they must never be read.
        for (std::uint32_t y = 0; y < 4; ++y)
            for (std::uint32_t x = 0; x < 4; ++x)
                if (m.latent.at(y, x) == 0.0f)
                    for (std::uint32_t c = 0; c < 4; ++c)
                        input.at(y, x, c) = std::nanf("");
        const auto out = blend_known_region(prev, input, m);
        for (std::uint32_t y = 0; y < 4; ++y)
            for (std::uint32_t x = 0; x < 4; ++x)
                for (std::uint32_t c = 0; c < 4; ++c) {
                    const float want = m.latent.at(y, x) == 1.0f ? input.at(y, x, c) : prev.at(y, x, c);
                    CHECK(same_bits(want, out.at(y, x, c)));
                }
    }
}

TEST_CASE("mock schedule matches the closed form") {
    const auto a = backends::scaled_linear_schedule();
    REQUIRE(a.size() == 1000);
    CHECK(a[0] == doctest::Approx(0.99915).epsilon(1e-15));
    CHECK(a[499] == doctest::Approx(0.27766965045646763).epsilon(1e-13));
    CHECK(a[999] == doctest::Approx(0.004660098513077234).epsilon(1e-12));
    for (std::size_t i = 1; i < a.size(); ++i)
        CHECK(a[i] < a[i - 1]);
}

TEST_CASE("schedule: timesteps and DDIM update") {
    const NoiseSchedule s(backends::mock_manifest());
    const auto ts = s.sampling_timesteps(50);
    REQUIRE(ts.size() == 50);
    CHECK(ts.front() == 980);
    CHECK(ts[1] == 960);
    CHECK(ts.back() == 0);
    CHECK(s.sampling_timesteps(1) == std::vector<int>{0});
    CHECK(s.sampling_timesteps(3) == std::vector<int>{666, 333, 0});
    CHECK_THROWS_AS(s.sampling_timesteps(0), ConfigError);
    CHECK_THROWS_AS(s.sampling_timesteps(1001), ConfigError);

    // x0 = (z - sqrt(1-a) eps) / sqrt(a); z' = sqrt(a') x0 + sqrt(1-a') eps
    Tensor z({1, 1, 1}, std::vector<float>{0.7f});
    const Tensor eps({1, 1, 1}, std::vector<float>{0.2f});
    const double a = s.alpha_cumprod(500), ap = s.alpha_cumprod(480);
    const double x0 = (0.7 - std::sqrt(1 - a) * 0.2) / std::sqrt(a);
    const double want = std::sqrt(ap) * x0 + std::sqrt(1 - ap) * 0.2;
    s.ddim_step(z, eps, 500, 480);
    CHECK(z[0] == doctest::Approx(want).epsilon(1e-5));
    // To the clean end the prediction is x0 itself.
    Tensor z2({1, 1, 1}, std::vector<float>{0.7f});
    s.ddim_step(z2, eps, 500, -1);
    CHECK(z2[0] == doctest::Approx(x0).epsilon(1e-5));
}

TEST_CASE("schedule rejects an inconsistent manifest") {
    auto m = backends::mock_manifest();
    m.alphas_cumprod[3] += 1e-9;
    CHECK_THROWS_AS(NoiseSchedule{m}, BackendError);
    m = backends::mock_manifest();
    m.timesteps = 999;
    CHECK_THROWS_AS(NoiseSchedule{m}, BackendError);
}

TEST_CASE("known region is reproduced bit-exactly at every step") {
    backends::MockDenoiser den(7);
    const Box box{32, 32, 96, 96};
    const auto mask = make_inpaint_mask(std::vector<Box>{box}, 128, 128);
    const auto z0 = source_latent(16, 16);
    int observed = 0;
    bool all_exact = true;
    SamplingHooks hooks;
    hooks.observe = [&](const StepEvent& ev) {
        ++observed;
        for (std::uint32_t y = 0; y < 16; ++y)
            for (std::uint32_t x = 0; x < 16; ++x)
                if (mask.latent.at(y, x) == 1.0f)
                    for (std::uint32_t c = 0; c < 4; ++c)
                        all_exact = all_exact && same_bits(ev.working.at(y, x, c), ev.noised_input.at(y, x, c));
    };
    const auto r = run_sampling(z0, mask, knife(box), {50, 7.5f, 3}, den, hooks);
    CHECK(observed == 50);
    CHECK(all_exact);
    for (std::uint32_t y = 0; y < 16; ++y)
        for (std::uint32_t x = 0; x < 16; ++x)
            if (mask.latent.at(y, x) == 1.0f)
                for (std::uint32_t c = 0; c < 4; ++c)
                    CHECK(r.z0.at(y, x, c) == z0.at(y, x, c));
}

TEST_CASE("repainted region never reads the source latent") {
    backends::MockDenoiser den(7);
    const Box box{16, 16, 48, 48};
    const auto mask = make_inpaint_mask(std::vector<Box>{box}, 64, 64);
    const auto z0 = source_latent(8, 8);
    auto poisoned = z0;
    for (std::uint32_t y = 2; y < 6; ++y)
        for (std::uint32_t x = 2; x < 6; ++x)
            for (std::uint32_t c = 0; c < 4; ++c)
                poisoned.at(y, x, c) = 1000.0f + static_cast<float>(y * 8 + x);
    const auto a = run_sampling(z0, mask, knife(box), {20, 7.5f, 1}, den);
    const auto b = run_sampling(poisoned, mask, knife(box), {20, 7.5f, 1}, den);
    CHECK(bit_equal(a.z0, b.z0));
}

TEST_CASE("zero noise with an all-known mask is a fixed point") {
    backends::MockDenoiser den(0, backends::NoiseScript::Zero);
    const auto mask = make_inpaint_mask({}, 64, 64);
    const auto z0 = source_latent(8, 8);
    const auto r = run_sampling(z0, mask, knife({0, 0, 8, 8}), {10, 7.5f, 5}, den);
    CHECK(bit_equal(r.z0, z0));
}

TEST_CASE("zero noise with an all-repaint mask rescales the initial noise") {
    backends::MockDenoiser den(0, backends::NoiseScript::Zero);
    const auto mask = make_inpaint_mask(std::vector<Box>{{0, 0, 64, 64}}, 64, 64);
    const auto z0 = source_latent(8, 8);
    const SamplerConfig cfg{10, 7.5f, 5};
    const auto r = run_sampling(z0, mask, knife({0, 0, 64, 64}), cfg, den);
    // With eps = 0, DDIM scales z by 1 / sqrt(a_first) overall.
    const double a_first = NoiseSchedule(den.manifest()).alpha_cumprod(900);
    for (std::size_t i = 0; i < r.z0.size(); ++i) {
        const double init = gaussian_at(hash_combine(cfg.seed, 0x696e6974ULL), i);
        CHECK(r.z0[i] == doctest::Approx(init / std::sqrt(a_first)).epsilon(1e-4));
    }
}

TEST_CASE("guidance 0 follows the unconditional branch only") {
    auto inner = std::make_shared<backends::MockDenoiser>(7);
    UncondOnly plain(inner, 0.0f), shifted(inner, 5.0f);
    const Box box{16, 16, 48, 48};
    const auto mask = make_inpaint_mask(std::vector<Box>{box}, 64, 64);
    const auto z0 = source_latent(8, 8);
    const auto a = run_sampling(z0, mask, knife(box), {10, 0.0f, 2}, plain);
    const auto b = run_sampling(z0, mask, knife(box), {10, 0.0f, 2}, shifted);
    const auto c = run_sampling(z0, mask, knife(box), {10, 0.0f, 2}, *inner);
    CHECK(bit_equal(a.z0, b.z0));
    CHECK(bit_equal(a.z0, c.z0));
    const auto d = run_sampling(z0, mask, knife(box), {10, 1.0f, 2}, shifted);
    CHECK_FALSE(bit_equal(a.z0, d.z0));
}

TEST_CASE("attention maps are normalised and peak inside the entity box") {
    backends::MockDenoiser den(7);
    const Box box{16, 16, 48, 48};
    const auto mask = make_inpaint_mask(std::vector<Box>{box}, 64, 64);
    const auto r = run_sampling(source_latent(8, 8), mask, knife(box), {5, 7.5f, 2}, den);
    REQUIRE(r.attention.size() == 1);
    const auto& map = r.attention[0].map;
    CHECK(r.attention[0].samples == 5);
    CHECK(map.dims() == std::vector<std::uint32_t>{64, 64});
    float lo = 1.0f, hi = 0.0f;
    std::uint32_t ay = 0, ax = 0;
    for (std::uint32_t y = 0; y < 64; ++y)
        for (std::uint32_t x = 0; x < 64; ++x) {
            lo = std::min(lo, map.at(y, x));
            if (map.at(y, x) > hi) {
                hi = map.at(y, x);
                ay = y;
                ax = x;
            }
        }
    CHECK(lo == 0.0f);
    CHECK(hi == 1.0f);
    CHECK((ax >= box.x1 && ax < box.x2 && ay >= box.y1 && ay < box.y2));
}

TEST_CASE("normalize_map and upsample_nearest") {
    const auto n = normalize_map(Tensor({1, 3}, std::vector<float>{2, 4, 6}));
    CHECK(n.values() == std::vector<float>{0.0f, 0.5f, 1.0f});
    CHECK(normalize_map(Tensor({2, 2}, 3.0f)).values() == std::vector<float>(4, 0.0f));
    const auto up = upsample_nearest(Tensor({1, 2}, std::vector<float>{1, 2}), 2, 4);
    CHECK(up.values() == std::vector<float>{1, 1, 2, 2, 1, 1, 2, 2});
    CHECK_THROWS_AS(upsample_nearest(Tensor({1, 2}), 3, 3), DimensionError);
    const auto f = finalize_attention({2, 4, 6, 8}, 2, 2, 2, 4, 4);
    CHECK(f.at(0, 0) == 0.0f);
    CHECK(f.at(3, 3) == 1.0f);
}

TEST_CASE("sampling is deterministic and matches the frozen latent") {
    backends::MockDenoiser den(7);
    const Box box{16, 16, 48, 48};
    const auto mask = make_inpaint_mask(std::vector<Box>{box}, 64, 64);
    const auto z0 = source_latent(8, 8);
    const SamplerConfig cfg{50, 7.5f, derive_key(7, "xr_0001", "sampler")};
    const auto a = run_sampling(z0, mask, knife(box), cfg, den);
    const auto b = run_sampling(z0, mask, knife(box), cfg, den);
    CHECK(bit_equal(a.z0, b.z0));
    CHECK(golden::check_tensor("latent_z0_seed7_8x8x4.xten", a.z0) == "");
    CHECK(golden::check_tensor("latent_attention_seed7_64x64.xten", a.attention[0].map) == "");
}

TEST_CASE("run_sampling rejects bad inputs") {
    backends::MockDenoiser den(7);
    const auto mask = make_inpaint_mask({}, 64, 64);
    CHECK_THROWS_AS(run_sampling(source_latent(8, 8), mask, {}, {}, den), ConfigError);
    CHECK_THROWS_AS(run_sampling(source_latent(4, 8), mask, knife({0, 0, 8, 8}), {}, den), DimensionError);
    CHECK_THROWS_AS(run_sampling(source_latent(8, 8), mask, knife({0, 0, 8, 8}), {5, -1.0f, 0}, den), ConfigError);
}
