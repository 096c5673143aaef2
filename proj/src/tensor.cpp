// SPDX-License-Identifier: Apache-2.0

#include "xsyn/tensor.hpp"

#include <cmath>
#include <cstring>

#include "xsyn/errors.hpp"

namespace xsyn {

std::size_t element_count(const std::vector<std::uint32_t>& dims) {
    if (dims.empty())
        return 0;
    std::size_t n = 1;
    for (auto d : dims)
        n *= d;
    return n;
}

std::string dims_to_string(const std::vector<std::uint32_t>& dims) {
    std::string s = "(";
    for (std::size_t i = 0; i < dims.size(); ++i) {
        if (i)
            s += ',';
        s += std::to_string(dims[i]);
    }
    return s + ")";
}

Tensor::Tensor(std::vector<std::uint32_t> dims, float fill) : m_dims(std::move(dims)) {
    for (auto d : m_dims)
        if (d == 0)
            throw DimensionError("tensor dims must be positive, got " + dims_to_string(m_dims));
    m_data.assign(element_count(m_dims), fill);
}

Tensor::Tensor(std::vector<std::uint32_t> dims, std::vector<float> data)
    : m_dims(std::move(dims)), m_data(std::move(data)) {
    for (auto d : m_dims)
        if (d == 0)
            throw DimensionError("tensor dims must be positive, got " + dims_to_string(m_dims));
    if (element_count(m_dims) != m_data.size())
        throw DimensionError("tensor dims " + dims_to_string(m_dims) + " do not match " +
                             std::to_string(m_data.size()) + " values");
}

bool Tensor::all_finite() const {
    for (float v : m_data)
        if (!std::isfinite(v))
            return false;
    return true;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
    return a.dims() == b.dims() &&
           std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(float)) == 0;
}

}  // namespace xsyn
