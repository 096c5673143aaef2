// SPDX-License-Identifier: Apache-2.0

#include "xsyn/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "xsyn/errors.hpp"

namespace xsyn::data {

using nlohmann::json;

namespace {

std::string id_from_json(const json& v, const std::string& where) {
    if (v.is_string())
        return v.get<std::string>();
    if (v.is_number_integer())
        return std::to_string(v.get<long long>());
    throw ParseError(where + ": id must be a string or an integer");
}

double number(const json& v, const std::string& where) {
    if (!v.is_number())
        throw ParseError(where + ": expected a number");
    return v.get<double>();
}

}  // namespace

void DetectionDataset::validate() const {
    std::set<std::string> ids;
    for (const auto& img : images) {
        if (img.id.empty())
            throw IntegrityError("image with empty id");
        if (img.width <= 0 || img.height <= 0)
            throw IntegrityError("image '" + img.id + "' has non-positive size");
        if (!ids.insert(img.id).second)
            throw IntegrityError("duplicate image id '" + img.id + "'");
    }
    const std::set<std::string> classes(class_names.begin(), class_names.end());
    if (classes.size() != class_names.size())
        throw IntegrityError("duplicate category name");
    for (std::size_t i = 0; i < annotations.size(); ++i) {
        const auto& a = annotations[i];
        const std::string where = "annotation #" + std::to_string(i);
        const ImageRecord* img = find_image(a.image_id);
        if (!img)
            throw IntegrityError(where + " references unknown image_id '" + a.image_id + "'");
        if (a.class_name.empty())
            throw IntegrityError(where + " has an empty category");
        if (!classes.count(a.class_name))
            throw IntegrityError(where + " uses undeclared category '" + a.class_name + "'");
        if (!a.box.well_formed())
            throw IntegrityError(where + " has a malformed box " + to_string(a.box));
        if (a.box.x1 < 0 || a.box.y1 < 0 || a.box.x2 > img->width || a.box.y2 > img->height)
            throw IntegrityError(where + " box " + to_string(a.box) + " lies outside image '" + img->id + "'");
    }
}

const ImageRecord* DetectionDataset::find_image(std::string_view id) const {
    auto it = std::find_if(images.begin(), images.end(), [&](const ImageRecord& r) { return r.id == id; });
    return it == images.end() ? nullptr : &*it;
}

std::vector<BoxAnnotation> DetectionDataset::annotations_for(std::string_view image_id) const {
    std::vector<BoxAnnotation> out;
    for (const auto& a : annotations)
        if (a.image_id == image_id)
            out.push_back(a);
    return out;
}

DetectionDataset parse_dataset(const json& doc) {
    if (!doc.is_object())
        throw ParseError("annotation file: top level must be an object");
    bool xywh = false;
    if (doc.contains("bbox_format")) {
        const auto fmt = doc.at("bbox_format").get<std::string>();
        if (fmt == "xywh")
            xywh = true;
        else if (fmt != "xyxy")
            throw ParseError("annotation file: unknown bbox_format '" + fmt + "'");
    }

    DetectionDataset ds;
    std::map<std::string, std::string> coco_names;  // COCO category id -> name
    for (const auto& c : doc.value("categories", json::array())) {
        if (c.is_string()) {
            ds.class_names.push_back(c.get<std::string>());
        } else if (c.is_object() && c.contains("name") && c.at("name").is_string()) {
            ds.class_names.push_back(c.at("name").get<std::string>());
            if (c.contains("id"))
                coco_names[id_from_json(c.at("id"), "categories")] = ds.class_names.back();
        } else
            throw ParseError("annotation file: category entries must be names");
    }

    const auto& images = doc.value("images", json::array());
    for (std::size_t i = 0; i < images.size(); ++i) {
        const auto& j = images[i];
        const std::string where = "images[" + std::to_string(i) + "]";
        if (!j.is_object() || !j.contains("id") || !j.contains("width") || !j.contains("height"))
            throw ParseError(where + ": needs id, width and height");
        ImageRecord rec;
        rec.id = id_from_json(j.at("id"), where);
        rec.width = static_cast<int>(number(j.at("width"), where));
        rec.height = static_cast<int>(number(j.at("height"), where));
        rec.file_name = j.value("file_name", std::string{});
        ds.images.push_back(std::move(rec));
    }

    const auto& annotations = doc.value("annotations", json::array());
    for (std::size_t i = 0; i < annotations.size(); ++i) {
        const auto& j = annotations[i];
        const std::string where = "annotations[" + std::to_string(i) + "]";
        if (!j.is_object() || !j.contains("image_id") || !j.contains("bbox"))
            throw ParseError(where + ": needs image_id and bbox");
        const auto& bb = j.at("bbox");
        if (!bb.is_array() || bb.size() != 4)
            throw ParseError(where + ": bbox must have four numbers");
        BoxAnnotation a;
        a.image_id = id_from_json(j.at("image_id"), where);
        if (j.contains("category") && j.at("category").is_string()) {
            a.class_name = j.at("category").get<std::string>();
        } else if (j.contains("category_id")) {
            const auto it = coco_names.find(id_from_json(j.at("category_id"), where));
            if (it == coco_names.end())
                throw IntegrityError(where + " references an unknown category_id");
            a.class_name = it->second;
        }
        a.box = {number(bb[0], where), number(bb[1], where), number(bb[2], where), number(bb[3], where)};
        if (xywh) {
            a.box.x2 += a.box.x1;
            a.box.y2 += a.box.y1;
        }
        if (!a.box.well_formed())
            throw IntegrityError(where + " has a malformed box " + to_string(a.box));
        if (const ImageRecord* img = ds.find_image(a.image_id)) {
            a.box = clamp_box(a.box, img->width, img->height);
            if (!a.box.well_formed())
                throw IntegrityError(where + " box lies entirely outside image '" + img->id + "'");
        }
        ds.annotations.push_back(std::move(a));
    }

    ds.validate();
    return ds;
}

DetectionDataset load_dataset(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f)
        throw ParseError("cannot open annotation file " + path.string());
    json doc;
    try {
        doc = json::parse(f);
    } catch (const json::exception& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
    try {
        return parse_dataset(doc);
    } catch (const json::exception& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
}

json to_json(const DetectionDataset& ds) {
    json images = json::array();
    for (const auto& img : ds.images)
        images.push_back({{"id", img.id}, {"width", img.width}, {"height", img.height}, {"file_name", img.file_name}});
    json annotations = json::array();
    for (const auto& a : ds.annotations)
        annotations.push_back({{"image_id", a.image_id}, {"category", a.class_name}, {"bbox", a.box.as_array()}});
    return {{"images", images}, {"annotations", annotations}, {"categories", ds.class_names}};
}

std::string serialize(const DetectionDataset& ds) {
    return to_json(ds).dump(2) + "\n";
}

void save_dataset(const DetectionDataset& ds, const std::filesystem::path& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f)
        throw Error("cannot open " + path.string() + " for writing");
    f << serialize(ds);
}

std::map<std::string, double> mean_area_per_class(const DetectionDataset& ds, std::vector<std::string>* warnings) {
    std::map<std::string, std::pair<double, std::size_t>> sums;
    for (const auto& a : ds.annotations) {
        auto& s = sums[a.class_name];
        s.first += a.box.area();
        ++s.second;
    }
    std::map<std::string, double> means;
    for (const auto& [name, s] : sums)
        means[name] = s.first / static_cast<double>(s.second);
    if (warnings)
        for (const auto& name : ds.class_names)
            if (!means.count(name))
                warnings->push_back("class '" + name + "' has no annotations and is left out of the groups");
    return means;
}

int ClassGroupTable::group_for_area(double area) const {
    if (area < lo)
        return 0;
    if (area < hi)
        return 1;
    return 2;
}

bool ClassGroupTable::contains(std::string_view class_name) const {
    for (const auto& g : groups)
        if (std::find(g.begin(), g.end(), class_name) != g.end())
            return true;
    return false;
}

ClassGroupTable build_class_groups(const std::map<std::string, double>& means, double lo, double hi) {
    if (!(lo < hi))
        throw ConfigError("class group boundaries must be strictly increasing");
    ClassGroupTable table;
    table.lo = lo;
    table.hi = hi;
    for (const auto& [name, mean] : means)
        table.groups[table.group_for_area(mean)].push_back(name);
    return table;
}

json to_json(const ClassGroupTable& table) {
    return {{"boundaries", {table.lo, table.hi}},
            {"groups", {table.groups[0], table.groups[1], table.groups[2]}}};
}

ClassGroupTable class_groups_from_json(const json& doc) {
    try {
        ClassGroupTable t;
        const auto& b = doc.at("boundaries");
        t.lo = b.at(0).get<double>();
        t.hi = b.at(1).get<double>();
        const auto& g = doc.at("groups");
        if (!g.is_array() || g.size() != 3)
            throw ParseError("class group table needs exactly three groups");
        for (int i = 0; i < 3; ++i)
            t.groups[i] = g.at(i).get<std::vector<std::string>>();
        if (!(t.lo < t.hi))
            throw ConfigError("class group boundaries must be strictly increasing");
        std::set<std::string> seen;
        for (const auto& grp : t.groups)
            for (const auto& name : grp)
                if (!seen.insert(name).second)
                    throw ConfigError("class '" + name + "' appears in more than one group");
        return t;
    } catch (const json::exception& e) {
        throw ParseError(std::string("class group table: ") + e.what());
    }
}

ClassGroupTable load_class_groups(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f)
        throw ParseError("cannot open " + path.string());
    try {
        return class_groups_from_json(json::parse(f));
    } catch (const json::exception& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
}

std::vector<BoxAnnotation> filter_small_boxes(std::span<const BoxAnnotation> boxes, const ImageRecord& image,
                                              double min_ratio) {
    const double threshold = min_ratio * image.area();
    std::vector<BoxAnnotation> out;
    for (const auto& b : boxes)
        if (b.box.area() >= threshold)
            out.push_back(b);
    return out;
}

}  // namespace xsyn::data
