// SPDX-License-Identifier: Apache-2.0

#include "xsyn/backend.hpp"

#include <bit>
#include <cstring>

#include "xsyn/digest.hpp"
#include "xsyn/errors.hpp"

namespace xsyn::backends {

namespace {
[[noreturn]] void dims_mismatch(const std::string& message) {
    throw BackendError(BackendError::Kind::Protocol, "DIMS_MISMATCH", message);
}
}  // namespace

std::string schedule_digest(const std::vector<double>& alphas_cumprod) {
    std::vector<std::uint8_t> bytes;
    bytes.reserve(alphas_cumprod.size() * 8);
    for (double a : alphas_cumprod) {
        const auto bits = std::bit_cast<std::uint64_t>(a);
        for (int i = 0; i < 8; ++i)
            bytes.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
    }
    return sha256_hex(bytes);
}

void check_denoise_response(const DenoiseRequest& request, const DenoiseResponse& response,
                            bool expect_attention) {
    const auto& in = request.latent;
    if (in.rank() != 3 || in.channels() < 3 || in.channels() % 2 == 0)
        dims_mismatch("denoise request latent must be H x W x (2C+1), got " + dims_to_string(in.dims()));
    const std::uint32_t c = (in.channels() - 1) / 2;
    const std::vector<std::uint32_t> want{in.height(), in.width(), c};
    if (response.noise.dims() != want)
        dims_mismatch("predicted noise has dims " + dims_to_string(response.noise.dims()) + ", expected " +
                      dims_to_string(want));
    if (!response.noise.all_finite())
        dims_mismatch("predicted noise holds non-finite values");
    if (expect_attention) {
        if (response.attention.size() != request.entities.size())
            dims_mismatch("expected " + std::to_string(request.entities.size()) + " attention maps, got " +
                          std::to_string(response.attention.size()));
        for (const auto& m : response.attention) {
            if (m.rank() != 2)
                dims_mismatch("attention maps must be rank 2, got " + dims_to_string(m.dims()));
            if (!m.all_finite())
                dims_mismatch("attention map holds non-finite values");
        }
    }
}

void check_segment_response(const SegmentRequest& request, const SegmentationResult& response) {
    const std::vector<std::uint32_t> want{request.image.height(), request.image.width()};
    if (request.mode == SegmentMode::Prompt && response.masks.size() != 1)
        dims_mismatch("prompt segmentation must return exactly one mask, got " +
                      std::to_string(response.masks.size()));
    for (const auto& m : response.masks)
        if (m.mask.dims() != want)
            dims_mismatch("mask dims " + dims_to_string(m.mask.dims()) + " differ from image " + dims_to_string(want));
}

}  // namespace xsyn::backends
