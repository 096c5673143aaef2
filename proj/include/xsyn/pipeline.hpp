// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "xsyn/backend.hpp"
#include "xsyn/bom.hpp"
#include "xsyn/dataset.hpp"
#include "xsyn/grounding.hpp"
#include "xsyn/latent_engine.hpp"

namespace xsyn::pipeline {

/// How CAR turns an attention map into point prompts.
enum class PointStrategy { Mps, TopK };

std::string to_string(PointStrategy s);
PointStrategy point_strategy_from_string(std::string_view s);

struct PipelineConfig {
    grounding::Mode mode = grounding::Mode::Mod;
    float alpha = 0.3f;
    /// MPS depth n; TOPK uses `topk` instead.
    int divisions = 4;
    PointStrategy strategy = PointStrategy::Mps;
    int topk = 15;
    /// Idle-region IoU threshold d.
    double iou_threshold = 0.2;
    double min_box_ratio = 0.001;
    latent::SamplerConfig sampler;
    std::uint64_t seed = 0;
    bool bom = true;
    bom::Period period = bom::Period::Final;
    bom::Space space = bom::Space::Latent;
    /// Images are resized to image_size x image_size before generation.
    int image_size = 512;
    int jobs = 1;
    /// Also write intermediate tensors to out/debug.
    bool debug = false;
    /// "mock" or "remote"; informational here, the caller builds the backends.
    std::string backend = "mock";

    /// Throws ConfigError on out-of-range values or unsupported combinations.
    void validate() const;
};

/// Snapshot written into the run manifest. Paths and endpoints are left out
/// so the same run from two places gives the same manifest.
nlohmann::json to_json(const PipelineConfig& cfg);

struct RunInputs {
    /// Directory the dataset's file_name entries are relative to.
    std::filesystem::path image_root;
    std::filesystem::path out_dir;
    /// Required in ADD mode.
    std::optional<data::ClassGroupTable> class_groups;
};

struct ImageOutcome {
    std::string image_id;
    bool generated = false;
    /// Why the image was skipped (error class and message).
    std::string reason;
    std::vector<std::string> flags;
    std::vector<data::BoxAnnotation> annotations;
    std::size_t input_annotations = 0;
    std::size_t filtered_annotations = 0;
    std::string output_file;
    std::string output_sha256;
    nlohmann::json details = nlohmann::json::object();
    double seconds = 0.0;
};

struct RunManifest {
    nlohmann::json config;
    nlohmann::json backend;
    std::vector<ImageOutcome> entries;
    std::string annotations_sha256;
    /// sha256 over the canonical manifest without this field.
    std::string digest;

    nlohmann::json to_json() const;
};

struct RunOutput {
    data::DetectionDataset dataset;
    RunManifest manifest;
    /// Wall-clock seconds; kept out of the output tree so reruns stay byte-identical.
    double seconds = 0.0;
};

/// Generates one synthetic image per input image and writes
/// out/images/<id>.png, out/annotations.json, out/manifest.json and, with
/// `debug`, out/debug/<id>.<tensor>.xten. Per-image failures are recorded in
/// the manifest and never abort the batch.
RunOutput run_xsyn(const data::DetectionDataset& ds, const PipelineConfig& cfg, const backends::BackendSet& backends,
                   const RunInputs& inputs);

/// Result of processing a single image, without touching the file system.
struct ImageResult {
    ImageOutcome outcome;
    Tensor image;  // final (hidden) image, H x W x 3
    std::vector<std::pair<std::string, Tensor>> debug_tensors;
};

ImageResult process_image(const data::ImageRecord& record, const Tensor& pixels,
                          const std::vector<data::BoxAnnotation>& annotations, const PipelineConfig& cfg,
                          const backends::BackendSet& backends, const std::optional<data::ClassGroupTable>& groups);

/// File-name-safe form of an image id.
std::string safe_file_stem(const std::string& image_id);

}  // namespace xsyn::pipeline
