// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "xsyn/dataset.hpp"
#include "xsyn/mock_backends.hpp"

// Planted-shape fixtures: synthetic X-ray-like scenes whose exact shape
// geometry is known, so segmentation and refinement can be checked exactly.
namespace xsyn::fixture {

struct SceneFixtureOptions {
    int images = 3;
    int size = 512;
    std::uint64_t seed = 7;
    /// Scatter small clutter shapes that can host a new item.
    bool clutter = true;
};

struct Fixture {
    data::DetectionDataset dataset;
    std::vector<backends::SceneDescriptor> scenes;
};

/// Images with a full-frame background, a bag, bright elliptical items
/// (annotated) and dim clutter rectangles (not annotated).
Fixture make_scene_fixture(const SceneFixtureOptions& options = {});

/// Writes dataset.json, images/<id>.png, scenes/<id>.json and groups.json
/// (boundaries 10000 / 25000) under `dir`.
void write_fixture(const Fixture& fixture, const std::filesystem::path& dir);

/// Scene for refinement checks: background, bag and 2..5 well separated items.
backends::SceneDescriptor make_car_scene(std::uint64_t seed, int index, int size = 256);

/// Pixel-resolution attention that follows a shape: a (1 - d^2)^2 bump over
/// the shape's ellipse scaled by `spread`, peak value 1.
Tensor planted_attention(const backends::PlantedShape& shape, std::uint32_t height, std::uint32_t width,
                         double spread = 1.1);

}  // namespace xsyn::fixture
