// SPDX-License-Identifier: Apache-2.0

#include "fixture.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "xsyn/errors.hpp"
#include "xsyn/image_io.hpp"
#include "xsyn/rng.hpp"

namespace xsyn::fixture {

using backends::PlantedShape;
using backends::SceneDescriptor;

namespace {

struct ItemClass {
    const char* name;
    double w, h;  // at 512 x 512
};

// Rough PIDray proportions: two small classes, two medium, one large.
constexpr ItemClass kClasses[] = {
    {"Knife", 40, 70}, {"Lighter", 30, 50}, {"Pliers", 90, 130}, {"Wrench", 70, 150}, {"Hammer", 150, 180},
};

// Item slot centres and clutter boxes on the 512 grid.
constexpr double kSlots[3][2] = {{150, 150}, {150, 360}, {330, 300}};
constexpr double kClutter[3][4] = {{300, 60, 370, 120}, {400, 130, 450, 200}, {390, 400, 460, 450}};

// Which class sits in which slot (-1 = empty), cycling over images.
constexpr int kPlans[3][3] = {{4, 0, -1}, {2, 1, 3}, {0, -1, -1}};

Box centred(double cx, double cy, double w, double h) {
    return {std::round(cx - w / 2), std::round(cy - h / 2), std::round(cx + w / 2), std::round(cy + h / 2)};
}

PlantedShape shape(PlantedShape::Kind kind, Box box, float value, std::string label) {
    PlantedShape s;
    s.kind = kind;
    s.box = box;
    s.value = value;
    s.label = std::move(label);
    return s;
}

}  // namespace

Fixture make_scene_fixture(const SceneFixtureOptions& options) {
    if (options.size < 64 || options.size % 8 != 0)
        throw ConfigError("fixture size must be a multiple of 8, at least 64");
    Fixture fx;
    const double k = options.size / 512.0;
    const auto S = static_cast<std::uint32_t>(options.size);
    std::vector<bool> used(std::size(kClasses), false);

    for (int i = 0; i < options.images; ++i) {
        char id[32];
        std::snprintf(id, sizeof id, "xr_%04d", i + 1);
        Rng rng(derive_key(options.seed, id, "fixture"));
        auto jitter = [&](int amount) { return static_cast<double>(rng.uniform_int(-amount, amount + 1)); };

        SceneDescriptor scene;
        scene.image_id = id;
        scene.width = scene.height = S;
        scene.shapes.push_back(shape(PlantedShape::Kind::Rect, {0, 0, double(S), double(S)}, 0.1f, "background"));
        scene.shapes.push_back(shape(PlantedShape::Kind::Rect, centred(256 * k, 256 * k, 452 * k, 452 * k), 0.3f, "bag"));
        if (options.clutter)
            for (const auto& c : kClutter) {
                const double dx = jitter(10), dy = jitter(10);
                scene.shapes.push_back(shape(PlantedShape::Kind::Rect,
                                             {std::round((c[0] + dx) * k), std::round((c[1] + dy) * k),
                                              std::round((c[2] + dx) * k), std::round((c[3] + dy) * k)},
                                             0.2f, "clutter"));
            }

        data::ImageRecord rec{id, options.size, options.size, std::string("images/") + id + ".png"};
        fx.dataset.images.push_back(rec);
        const auto& plan = kPlans[i % 3];
        for (int slot = 0; slot < 3; ++slot) {
            if (plan[slot] < 0)
                continue;
            const auto& cls = kClasses[plan[slot]];
            used[static_cast<std::size_t>(plan[slot])] = true;
            const Box box = centred((kSlots[slot][0] + jitter(15)) * k, (kSlots[slot][1] + jitter(15)) * k,
                                    cls.w * k, cls.h * k);
            const float value = 0.75f + 0.05f * static_cast<float>(rng.uniform_below(5));
            scene.shapes.push_back(shape(PlantedShape::Kind::Ellipse, box, value, cls.name));
            fx.dataset.annotations.push_back({id, cls.name, box});
        }
        fx.scenes.push_back(std::move(scene));
    }
    for (std::size_t c = 0; c < std::size(kClasses); ++c)
        if (used[c])
            fx.dataset.class_names.push_back(kClasses[c].name);
    fx.dataset.validate();
    return fx;
}

void write_fixture(const Fixture& fixture, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir / "images");
    std::filesystem::create_directories(dir / "scenes");
    data::save_dataset(fixture.dataset, dir / "dataset.json");
    for (const auto& scene : fixture.scenes) {
        image::write_png(dir / "images" / (scene.image_id + ".png"), backends::render_scene(scene));
        backends::save_scene(scene, dir / "scenes" / (scene.image_id + ".json"));
    }
    const auto table = data::build_class_groups(data::mean_area_per_class(fixture.dataset), 10000.0, 25000.0);
    std::ofstream f(dir / "groups.json", std::ios::binary);
    f << data::to_json(table).dump(2) << "\n";
}

SceneDescriptor make_car_scene(std::uint64_t seed, int index, int size) {
    Rng rng(hash_combine(seed, static_cast<std::uint64_t>(index)));
    SceneDescriptor scene;
    scene.image_id = "car_" + std::to_string(index);
    scene.width = scene.height = static_cast<std::uint32_t>(size);
    const double S = size;
    scene.shapes.push_back(shape(PlantedShape::Kind::Rect, {0, 0, S, S}, 0.1f, "background"));
    scene.shapes.push_back(shape(PlantedShape::Kind::Rect, {S / 16, S / 16, S - S / 16, S - S / 16}, 0.3f, "bag"));

    // 3 x 3 cells inside the bag; cells are far enough apart that a box
    // shifted by a quarter of its size never reaches a neighbour.
    const double cell = (S - S / 8) / 3.0;
    const double max_item = cell * 0.52, min_item = cell * 0.23;
    std::vector<int> cells{0, 1, 2, 3, 4, 5, 6, 7, 8};
    const int count = 2 + static_cast<int>(rng.uniform_below(4));
    for (int n = 0; n < count; ++n) {
        const auto pick = rng.uniform_below(cells.size() - static_cast<std::size_t>(n));
        std::swap(cells[static_cast<std::size_t>(n)], cells[static_cast<std::size_t>(n) + pick]);
        const int c = cells[static_cast<std::size_t>(n)];
        const double cx = S / 16 + cell * (c % 3 + 0.5) + static_cast<double>(rng.uniform_int(-3, 4));
        const double cy = S / 16 + cell * (c / 3 + 0.5) + static_cast<double>(rng.uniform_int(-3, 4));
        const double w = min_item + (max_item - min_item) * rng.uniform01();
        const double h = min_item + (max_item - min_item) * rng.uniform01();
        const float value = 0.6f + 0.35f * static_cast<float>(rng.uniform01());
        scene.shapes.push_back(shape(PlantedShape::Kind::Ellipse, centred(cx, cy, w, h), value,
                                     "item" + std::to_string(n)));
    }
    return scene;
}

Tensor planted_attention(const PlantedShape& s, std::uint32_t height, std::uint32_t width, double spread) {
    const double cx = (s.box.x1 + s.box.x2) / 2.0, cy = (s.box.y1 + s.box.y2) / 2.0;
    const double a = s.box.width() / 2.0 * spread, b = s.box.height() / 2.0 * spread;
    Tensor map({height, width}, 0.0f);
    for (std::uint32_t y = 0; y < height; ++y)
        for (std::uint32_t x = 0; x < width; ++x) {
            const double dx = (x + 0.5 - cx) / a, dy = (y + 0.5 - cy) / b;
            const double d2 = dx * dx + dy * dy;
            if (d2 < 1.0)
                map.at(y, x) = static_cast<float>((1.0 - d2) * (1.0 - d2));
        }
    return map;
}

}  // namespace xsyn::fixture
