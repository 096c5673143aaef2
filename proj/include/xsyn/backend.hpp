// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "xsyn/grounding.hpp"
#include "xsyn/segmentation.hpp"
#include "xsyn/tensor.hpp"

// Contracts for the model stacks the pipeline drives: a noise-predicting
// denoiser with cross-attention reporting, an image <-> latent codec, and a
// promptable segmenter. Implementations must be safe for concurrent calls.

namespace xsyn::backends {

inline constexpr int kProtocolVersion = 1;

struct Capabilities {
    bool attention = true;
    bool prompt_segmentation = true;
};

struct BackendManifest {
    std::string backend_id;
    int protocol_version = kProtocolVersion;
    int downscale = 8;
    int latent_channels = 4;
    /// Training timestep count T; alphas_cumprod has T entries.
    int timesteps = 1000;
    std::vector<double> alphas_cumprod;
    std::string schedule_digest;
    Capabilities capabilities;
};

/// sha256 over the little-endian float64 bytes of the schedule.
std::string schedule_digest(const std::vector<double>& alphas_cumprod);

enum class Branch { Conditional, Unconditional };

struct DenoiseRequest {
    /// Expanded inpainting input, H' x W' x (2C + 1).
    Tensor latent;
    int timestep = 0;
    std::string prompt;
    std::vector<grounding::GroundingEntity> entities;
    Branch branch = Branch::Conditional;
};

struct DenoiseResponse {
    /// Predicted noise, H' x W' x C.
    Tensor noise;
    /// One map per entity (conditional branch only), any H'' x W'' that divides the image.
    std::vector<Tensor> attention;
};

enum class SegmentMode { Auto, Prompt };

struct SegmentRequest {
    /// H x W x C image or map.
    Tensor image;
    SegmentMode mode = SegmentMode::Auto;
    /// Lets fixture-backed segmenters find the scene description.
    std::string image_id;
    std::optional<Box> box;
    std::vector<PointPrompt> points;
};

class DenoiserBackend {
public:
    virtual ~DenoiserBackend() = default;
    virtual BackendManifest manifest() = 0;
    virtual DenoiseResponse denoise(const DenoiseRequest& request) = 0;
};

class CodecBackend {
public:
    virtual ~CodecBackend() = default;
    virtual Tensor encode(const Tensor& image) = 0;
    virtual Tensor decode(const Tensor& latent) = 0;
};

class SegmenterBackend {
public:
    virtual ~SegmenterBackend() = default;
    /// AUTO returns every mask sorted by area, largest first; PROMPT returns exactly one mask.
    virtual SegmentationResult segment(const SegmentRequest& request) = 0;
};

struct BackendSet {
    std::shared_ptr<DenoiserBackend> denoiser;
    std::shared_ptr<CodecBackend> codec;
    std::shared_ptr<SegmenterBackend> segmenter;
};

// Shape checks shared by the in-process engine and the remote client. They
// throw BackendError(Protocol, "DIMS_MISMATCH", ...).
void check_denoise_response(const DenoiseRequest& request, const DenoiseResponse& response,
                            bool expect_attention);
void check_segment_response(const SegmentRequest& request, const SegmentationResult& response);

}  // namespace xsyn::backends
