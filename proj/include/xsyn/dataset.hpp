// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "xsyn/geometry.hpp"

namespace xsyn::data {

struct BoxAnnotation {
    std::string image_id;
    std::string class_name;
    Box box;

    friend bool operator==(const BoxAnnotation&, const BoxAnnotation&) = default;
};

struct ImageRecord {
    std::string id;
    int width = 0;
    int height = 0;
    std::string file_name;

    double area() const { return static_cast<double>(width) * height; }
    friend bool operator==(const ImageRecord&, const ImageRecord&) = default;
};

/// Images with labelled axis-aligned boxes. Construct through `load_dataset`,
/// `parse_dataset` or fill the fields and call `validate()`.
struct DetectionDataset {
    std::vector<ImageRecord> images;
    std::vector<BoxAnnotation> annotations;
    std::vector<std::string> class_names;

    /// Checks every invariant; throws IntegrityError naming the offending record.
    void validate() const;

    const ImageRecord* find_image(std::string_view id) const;
    std::vector<BoxAnnotation> annotations_for(std::string_view image_id) const;
};

/// Accepts the canonical corner-form format and the COCO-style
/// `"bbox_format": "xywh"` variant. Boxes are clamped to their image.
DetectionDataset parse_dataset(const nlohmann::json& doc);
DetectionDataset load_dataset(const std::filesystem::path& path);

nlohmann::json to_json(const DetectionDataset& ds);

/// Canonical serialisation: sorted keys, two-space indent, trailing newline.
std::string serialize(const DetectionDataset& ds);
void save_dataset(const DetectionDataset& ds, const std::filesystem::path& path);

/// Mean box area per class. Classes without annotations are left out and
/// reported through `warnings` when given.
std::map<std::string, double> mean_area_per_class(const DetectionDataset& ds,
                                                  std::vector<std::string>* warnings = nullptr);

/// Three class groups split by mean area on half-open intervals
/// [0, lo), [lo, hi), [hi, inf).
struct ClassGroupTable {
    std::array<std::vector<std::string>, 3> groups;
    double lo = 10000.0;
    double hi = 25000.0;

    /// Index 0..2 of the interval containing `area`.
    int group_for_area(double area) const;
    bool contains(std::string_view class_name) const;
};

ClassGroupTable build_class_groups(const std::map<std::string, double>& means, double lo, double hi);

nlohmann::json to_json(const ClassGroupTable& table);
ClassGroupTable class_groups_from_json(const nlohmann::json& doc);
ClassGroupTable load_class_groups(const std::filesystem::path& path);

/// Keeps boxes whose area is at least `min_ratio * H * W`, in order.
std::vector<BoxAnnotation> filter_small_boxes(std::span<const BoxAnnotation> boxes, const ImageRecord& image,
                                              double min_ratio);

}  // namespace xsyn::data
