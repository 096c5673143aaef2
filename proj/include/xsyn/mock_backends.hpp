// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "xsyn/backend.hpp"

// Deterministic stand-ins for the model stacks, specified in
// docs/mock-generators.md so that a remote implementation can reproduce them
// bit for bit. None of them needs model weights.

namespace xsyn::backends {

/// Scaled-linear beta schedule, betas_i = (sqrt(b0) + (sqrt(b1) - sqrt(b0)) * i / (T - 1))^2,
/// returned as cumulative products of (1 - beta).
std::vector<double> scaled_linear_schedule(int timesteps = 1000, double beta_start = 0.00085,
                                           double beta_end = 0.012);

enum class NoiseScript {
    Zero,        // predicts zero noise
    ValueNoise,  // eps = z + 0.1 * hashed noise, pulled down under each entity's bump
};

std::string to_string(NoiseScript s);
NoiseScript noise_script_from_string(std::string_view s);

BackendManifest mock_manifest(NoiseScript script = NoiseScript::ValueNoise);

/// Smooth bump (1 - d^2)^2 on the latent grid, centred in `pixel_box`, zero
/// outside the inscribed ellipse.
Tensor mock_attention_map(const Box& pixel_box, std::uint32_t latent_h, std::uint32_t latent_w,
                          int downscale = 8);

class MockDenoiser final : public DenoiserBackend {
public:
    explicit MockDenoiser(std::uint64_t seed = 0, NoiseScript script = NoiseScript::ValueNoise);

    BackendManifest manifest() override;
    DenoiseResponse denoise(const DenoiseRequest& request) override;

private:
    std::uint64_t m_seed;
    NoiseScript m_script;
    BackendManifest m_manifest;
};

/// Block-average encoder / nearest-neighbour decoder pair with a bounded
/// non-linearity, 8x downscale, 4 latent channels.
class MockCodec final : public CodecBackend {
public:
    Tensor encode(const Tensor& image) override;
    Tensor decode(const Tensor& latent) override;
};

/// Shape painted into a fixture image.
struct PlantedShape {
    enum class Kind { Rect, Ellipse };
    Kind kind = Kind::Rect;
    Box box;
    float value = 1.0f;
    std::string label;
};

/// Planted-shape description of one fixture image. Shapes are painted in
/// order, so later shapes cover earlier ones.
struct SceneDescriptor {
    std::string image_id;
    std::uint32_t width = 0;
    std::uint32_t height = 0;
    std::vector<PlantedShape> shapes;
};

/// Binary H x W mask of a shape: pixels whose centres fall inside it.
Tensor rasterize_shape(const PlantedShape& shape, std::uint32_t height, std::uint32_t width);

/// H x W x 3 gray image of the scene.
Tensor render_scene(const SceneDescriptor& scene);

nlohmann::json to_json(const SceneDescriptor& scene);
SceneDescriptor scene_from_json(const nlohmann::json& doc);
void save_scene(const SceneDescriptor& scene, const std::filesystem::path& path);

/// Immutable image_id -> scene lookup.
class SceneStore {
public:
    SceneStore() = default;
    /// Loads every *.json file of the directory.
    static std::shared_ptr<SceneStore> from_directory(const std::filesystem::path& dir);

    void add(SceneDescriptor scene);
    const SceneDescriptor* find(const std::string& image_id) const;
    std::size_t size() const { return m_scenes.size(); }

private:
    std::map<std::string, SceneDescriptor> m_scenes;
};

struct OracleOptions {
    /// Pixels at or above this mean intensity are foreground.
    float threshold = 0.5f;
    /// Search window = prompt box grown by this fraction of its size on every side.
    double margin = 0.5;
};

/// AUTO: the planted shapes of the scene as exact masks, largest first.
/// PROMPT: threshold the window around the box, take the 4-connected
/// components hit by foreground points (or, without any hit, the component
/// overlapping the box most) and drop the component under the background point.
class OracleSegmenter final : public SegmenterBackend {
public:
    explicit OracleSegmenter(std::shared_ptr<const SceneStore> scenes = nullptr, OracleOptions options = {});

    SegmentationResult segment(const SegmentRequest& request) override;

private:
    SegmentationResult segment_auto(const SegmentRequest& request) const;
    SegmentationResult segment_prompt(const SegmentRequest& request) const;

    std::shared_ptr<const SceneStore> m_scenes;
    OracleOptions m_options;
};

BackendSet make_mock_backends(std::uint64_t seed, std::shared_ptr<const SceneStore> scenes,
                              NoiseScript script = NoiseScript::ValueNoise);

}  // namespace xsyn::backends
