// SPDX-License-Identifier: Apache-2.0

#include "xsyn/xten.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "xsyn/errors.hpp"

namespace xsyn::xten {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i)
        out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace

std::vector<std::uint8_t> encode(const Tensor& tensor) {
    if (tensor.rank() == 0 || tensor.rank() > 255)
        throw DimensionError("XTEN supports ranks 1..255");
    std::vector<std::uint8_t> out;
    out.reserve(8 + 4 * tensor.rank() + 4 * tensor.size());
    const std::uint8_t header[8] = {'X', 'T', 'E', 'N', kVersion, kDtypeFloat32,
                                    static_cast<std::uint8_t>(tensor.rank()), 0};
    out.assign(std::begin(header), std::end(header));
    for (auto d : tensor.dims())
        put_u32(out, d);
    for (float v : tensor.data())
        put_u32(out, std::bit_cast<std::uint32_t>(v));
    return out;
}

Tensor decode(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 8 || std::memcmp(bytes.data(), "XTEN", 4) != 0)
        throw ParseError("XTEN: bad magic");
    if (bytes[4] != kVersion)
        throw ParseError("XTEN: unsupported version " + std::to_string(bytes[4]));
    if (bytes[5] != kDtypeFloat32)
        throw ParseError("XTEN: unsupported dtype code " + std::to_string(bytes[5]));
    const std::size_t rank = bytes[6];
    if (rank == 0)
        throw ParseError("XTEN: rank 0");
    if (bytes.size() < 8 + 4 * rank)
        throw ParseError("XTEN: truncated dims");

    std::vector<std::uint32_t> dims(rank);
    std::size_t count = 1;
    for (std::size_t i = 0; i < rank; ++i) {
        dims[i] = get_u32(bytes.data() + 8 + 4 * i);
        if (dims[i] == 0)
            throw ParseError("XTEN: zero dim");
        count *= dims[i];
    }
    const std::size_t offset = 8 + 4 * rank;
    if (bytes.size() - offset != 4 * count)
        throw ParseError("XTEN: payload holds " + std::to_string(bytes.size() - offset) +
                         " bytes, dims " + dims_to_string(dims) + " need " + std::to_string(4 * count));

    std::vector<float> data(count);
    for (std::size_t i = 0; i < count; ++i) {
        data[i] = std::bit_cast<float>(get_u32(bytes.data() + offset + 4 * i));
        if (!std::isfinite(data[i]))
            throw ParseError("XTEN: non-finite value at element " + std::to_string(i));
    }
    return Tensor(std::move(dims), std::move(data));
}

void write_file(const std::filesystem::path& path, const Tensor& tensor) {
    const auto bytes = encode(tensor);
    std::ofstream f(path, std::ios::binary);
    if (!f)
        throw Error("cannot open " + path.string() + " for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Tensor read_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f)
        throw ParseError("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return decode(bytes);
}

}  // namespace xsyn::xten
