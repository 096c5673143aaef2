// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace xsyn {

/// Dense row-major float32 array. Images and latents are laid out H x W x C,
/// single-channel maps and masks H x W.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::uint32_t> dims, float fill = 0.0f);
    Tensor(std::vector<std::uint32_t> dims, std::vector<float> data);

    const std::vector<std::uint32_t>& dims() const { return m_dims; }
    std::size_t rank() const { return m_dims.size(); }
    std::uint32_t dim(std::size_t i) const { return m_dims.at(i); }
    std::size_t size() const { return m_data.size(); }
    bool empty() const { return m_data.empty(); }

    std::span<float> data() { return m_data; }
    std::span<const float> data() const { return m_data; }
    const std::vector<float>& values() const { return m_data; }

    float& operator[](std::size_t i) { return m_data[i]; }
    float operator[](std::size_t i) const { return m_data[i]; }

    // Rank-2 and rank-3 accessors; no bounds checks beyond debug asserts.
    float& at(std::size_t y, std::size_t x) { return m_data[y * m_dims[1] + x]; }
    float at(std::size_t y, std::size_t x) const { return m_data[y * m_dims[1] + x]; }
    float& at(std::size_t y, std::size_t x, std::size_t c) {
        return m_data[(y * m_dims[1] + x) * m_dims[2] + c];
    }
    float at(std::size_t y, std::size_t x, std::size_t c) const {
        return m_data[(y * m_dims[1] + x) * m_dims[2] + c];
    }

    std::uint32_t height() const { return m_dims.at(0); }
    std::uint32_t width() const { return m_dims.at(1); }
    std::uint32_t channels() const { return m_dims.size() > 2 ? m_dims[2] : 1; }

    bool all_finite() const;

private:
    std::vector<std::uint32_t> m_dims;
    std::vector<float> m_data;
};

/// Same dims and identical bit patterns.
bool bit_equal(const Tensor& a, const Tensor& b);

std::size_t element_count(const std::vector<std::uint32_t>& dims);

std::string dims_to_string(const std::vector<std::uint32_t>& dims);

}  // namespace xsyn
