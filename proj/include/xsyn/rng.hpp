// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <string_view>

// Portable, index-addressable randomness. Every generator here is defined by
// integer arithmetic only (see docs/mock-generators.md) so that other
// implementations of the wire protocol can reproduce the streams exactly.

namespace xsyn {

/// splitmix64 finalizer.
std::uint64_t mix64(std::uint64_t z);

std::uint64_t hash_combine(std::uint64_t h, std::uint64_t v);

/// FNV-1a, 64 bit.
std::uint64_t hash_string(std::string_view s);

/// Stream key for one purpose of one image under a run seed.
std::uint64_t derive_key(std::uint64_t seed, std::string_view image_id, std::string_view purpose);

/// Standard-normal-like sample (Irwin-Hall of four uniforms, standardized) at
/// position `index` of the stream `key`.
float gaussian_at(std::uint64_t key, std::uint64_t index);

void fill_gaussian(std::span<float> out, std::uint64_t key);

/// Sequential generator (splitmix64). Unbiased integer sampling by rejection,
/// independent of the standard library's distribution implementations.
class Rng {
public:
    explicit Rng(std::uint64_t key) : m_state(key) {}

    std::uint64_t next();

    /// Uniform in [0, n). n must be positive.
    std::uint64_t uniform_below(std::uint64_t n);

    /// Uniform integer in [lo, hi). Requires lo < hi.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);

    /// Uniform in [0, 1) with 53 bits of resolution.
    double uniform01();

private:
    std::uint64_t m_state;
};

}  // namespace xsyn
