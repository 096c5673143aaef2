// SPDX-License-Identifier: Apache-2.0

#include "xsyn/rng.hpp"

#include <cassert>

namespace xsyn {

namespace {
constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;
constexpr double kTwoPow53Inv = 1.0 / 9007199254740992.0;
constexpr double kSqrt3 = 1.7320508075688772;

double unit_from_bits(std::uint64_t bits) {
    return static_cast<double>(bits >> 11) * kTwoPow53Inv;
}
}  // namespace

std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

std::uint64_t hash_combine(std::uint64_t h, std::uint64_t v) {
    return mix64(h ^ (v + kGolden + (h << 6) + (h >> 2)));
}

std::uint64_t hash_string(std::string_view s) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

std::uint64_t derive_key(std::uint64_t seed, std::string_view image_id, std::string_view purpose) {
    return hash_combine(hash_combine(seed, hash_string(image_id)), hash_string(purpose));
}

float gaussian_at(std::uint64_t key, std::uint64_t index) {
    double sum = 0.0;
    double u[4];
    for (std::uint64_t k = 0; k < 4; ++k)
        u[k] = unit_from_bits(mix64(key + kGolden * (4 * index + k + 1)));
    sum = (u[0] + u[1]) + (u[2] + u[3]);
    return static_cast<float>((sum - 2.0) * kSqrt3);
}

void fill_gaussian(std::span<float> out, std::uint64_t key) {
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = gaussian_at(key, i);
}

std::uint64_t Rng::next() {
    m_state += kGolden;
    return mix64(m_state);
}

std::uint64_t Rng::uniform_below(std::uint64_t n) {
    assert(n > 0);
    const std::uint64_t threshold = (0 - n) % n;
    for (;;) {
        const std::uint64_t r = next();
        if (r >= threshold)
            return r % n;
    }
}

std::int64_t Rng::uniform_int(std::int64_t lo, std::int64_t hi) {
    assert(lo < hi);
    return lo + static_cast<std::int64_t>(uniform_below(static_cast<std::uint64_t>(hi - lo)));
}

double Rng::uniform01() {
    return unit_from_bits(next());
}

}  // namespace xsyn
