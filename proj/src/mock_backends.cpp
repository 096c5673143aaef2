// SPDX-License-Identifier: Apache-2.0

#include "xsyn/mock_backends.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <numeric>

#include "xsyn/errors.hpp"
#include "xsyn/rng.hpp"

namespace xsyn::backends {

using nlohmann::json;

std::vector<double> scaled_linear_schedule(int timesteps, double beta_start, double beta_end) {
    std::vector<double> out(static_cast<std::size_t>(timesteps));
    const double s0 = std::sqrt(beta_start), s1 = std::sqrt(beta_end);
    double prod = 1.0;
    for (int i = 0; i < timesteps; ++i) {
        const double r = timesteps > 1 ? static_cast<double>(i) / (timesteps - 1) : 0.0;
        const double root = s0 + (s1 - s0) * r;
        prod *= 1.0 - root * root;
        out[static_cast<std::size_t>(i)] = prod;
    }
    return out;
}

std::string to_string(NoiseScript s) {
    return s == NoiseScript::Zero ? "zero" : "value-noise";
}

NoiseScript noise_script_from_string(std::string_view s) {
    if (s == "zero")
        return NoiseScript::Zero;
    if (s == "value-noise")
        return NoiseScript::ValueNoise;
    throw ConfigError("unknown mock noise script '" + std::string(s) + "'");
}

BackendManifest mock_manifest(NoiseScript script) {
    BackendManifest m;
    m.backend_id = "xsyn-mock/1 " + to_string(script);
    m.downscale = 8;
    m.latent_channels = 4;
    m.timesteps = 1000;
    m.alphas_cumprod = scaled_linear_schedule(m.timesteps);
    m.schedule_digest = schedule_digest(m.alphas_cumprod);
    m.capabilities = {true, true};
    return m;
}

Tensor mock_attention_map(const Box& pixel_box, std::uint32_t latent_h, std::uint32_t latent_w, int downscale) {
    const double s = downscale;
    const double cx = (pixel_box.x1 / s + pixel_box.x2 / s) / 2.0;
    const double cy = (pixel_box.y1 / s + pixel_box.y2 / s) / 2.0;
    const double hw = std::max((pixel_box.x2 / s - pixel_box.x1 / s) / 2.0, 0.5);
    const double hh = std::max((pixel_box.y2 / s - pixel_box.y1 / s) / 2.0, 0.5);
    Tensor map({latent_h, latent_w});
    for (std::uint32_t y = 0; y < latent_h; ++y)
        for (std::uint32_t x = 0; x < latent_w; ++x) {
            const double dx = (x + 0.5 - cx) / hw;
            const double dy = (y + 0.5 - cy) / hh;
            const double d2 = dx * dx + dy * dy;
            map.at(y, x) = d2 < 1.0 ? static_cast<float>((1.0 - d2) * (1.0 - d2)) : 0.0f;
        }
    return map;
}

MockDenoiser::MockDenoiser(std::uint64_t seed, NoiseScript script)
    : m_seed(seed), m_script(script), m_manifest(mock_manifest(script)) {}

BackendManifest MockDenoiser::manifest() {
    return m_manifest;
}

DenoiseResponse MockDenoiser::denoise(const DenoiseRequest& request) {
    const Tensor& in = request.latent;
    if (in.rank() != 3 || in.channels() < 3 || in.channels() % 2 == 0)
        throw BackendError(BackendError::Kind::Remote, "DIMS_MISMATCH",
                           "denoise input must be H' x W' x (2C+1), got " + dims_to_string(in.dims()));
    const std::uint32_t h = in.height(), w = in.width(), c = (in.channels() - 1) / 2;
    const bool conditional = request.branch == Branch::Conditional;

    DenoiseResponse out;
    out.noise = Tensor({h, w, c}, 0.0f);
    if (conditional)
        for (const auto& e : request.entities)
            out.attention.push_back(mock_attention_map(e.box, h, w, m_manifest.downscale));

    if (m_script == NoiseScript::Zero)
        return out;

    std::uint64_t key = hash_combine(m_seed, static_cast<std::uint64_t>(request.timestep));
    key = hash_combine(key, conditional ? 1 : 2);
    key = hash_combine(key, hash_string(request.prompt));

    Tensor bump({h, w}, 0.0f);
    for (const auto& m : out.attention)
        for (std::size_t i = 0; i < bump.size(); ++i)
            bump[i] = bump[i] + m[i];

    for (std::uint32_t y = 0; y < h; ++y)
        for (std::uint32_t x = 0; x < w; ++x)
            for (std::uint32_t k = 0; k < c; ++k) {
                const std::size_t idx = (static_cast<std::size_t>(y) * w + x) * c + k;
                float eps = in.at(y, x, k) + 0.1f * gaussian_at(key, idx);
                if (conditional)
                    eps = eps - 0.05f * bump.at(y, x);
                out.noise[idx] = eps;
            }
    return out;
}

namespace {

constexpr double kLatentClamp = 0.98;

}  // namespace

Tensor MockCodec::encode(const Tensor& image) {
    constexpr int ds = 8;
    if (image.rank() != 3 || image.channels() != 3 || image.height() % ds || image.width() % ds)
        throw BackendError(BackendError::Kind::Remote, "DIMS_MISMATCH",
                           "encode needs an H x W x 3 image with H, W multiples of 8, got " +
                               dims_to_string(image.dims()));
    const std::uint32_t lh = image.height() / ds, lw = image.width() / ds;
    Tensor latent({lh, lw, 4});
    for (std::uint32_t y = 0; y < lh; ++y)
        for (std::uint32_t x = 0; x < lw; ++x) {
            double v[3];
            for (int k = 0; k < 3; ++k) {
                double s = 0.0;
                for (int dy = 0; dy < ds; ++dy)
                    for (int dx = 0; dx < ds; ++dx)
                        s += image.at(y * ds + dy, x * ds + dx, k);
                const double u = std::clamp(2.0 * (s / (ds * ds)) - 1.0, -kLatentClamp, kLatentClamp);
                v[k] = u / (1.0 - std::abs(u));
                latent.at(y, x, k) = static_cast<float>(v[k]);
            }
            latent.at(y, x, 3) = static_cast<float>((v[0] + v[1] + v[2]) / 3.0);
        }
    return latent;
}

Tensor MockCodec::decode(const Tensor& latent) {
    constexpr std::uint32_t ds = 8;
    if (latent.rank() != 3 || latent.channels() < 3)
        throw BackendError(BackendError::Kind::Remote, "DIMS_MISMATCH",
                           "decode needs an H' x W' x C latent with C >= 3, got " + dims_to_string(latent.dims()));
    const std::uint32_t h = latent.height() * ds, w = latent.width() * ds;
    Tensor image({h, w, 3});
    for (std::uint32_t y = 0; y < latent.height(); ++y)
        for (std::uint32_t x = 0; x < latent.width(); ++x)
            for (std::uint32_t k = 0; k < 3; ++k) {
                const double v = latent.at(y, x, k);
                const auto p = static_cast<float>(0.5 + 0.5 * v / (1.0 + std::abs(v)));
                for (std::uint32_t dy = 0; dy < ds; ++dy)
                    for (std::uint32_t dx = 0; dx < ds; ++dx)
                        image.at(y * ds + dy, x * ds + dx, k) = p;
            }
    return image;
}

Tensor rasterize_shape(const PlantedShape& shape, std::uint32_t height, std::uint32_t width) {
    Tensor mask({height, width}, 0.0f);
    const PixelRect r = pixel_span(shape.box, static_cast<int>(width), static_cast<int>(height));
    const double cx = (shape.box.x1 + shape.box.x2) / 2.0, cy = (shape.box.y1 + shape.box.y2) / 2.0;
    const double a = shape.box.width() / 2.0, b = shape.box.height() / 2.0;
    for (int y = r.y1; y < r.y2; ++y)
        for (int x = r.x1; x < r.x2; ++x) {
            const double px = x + 0.5, py = y + 0.5;
            bool inside;
            if (shape.kind == PlantedShape::Kind::Rect) {
                inside = px >= shape.box.x1 && px < shape.box.x2 && py >= shape.box.y1 && py < shape.box.y2;
            } else {
                const double dx = (px - cx) / a, dy = (py - cy) / b;
                inside = dx * dx + dy * dy <= 1.0;
            }
            if (inside)
                mask.at(y, x) = 1.0f;
        }
    return mask;
}

Tensor render_scene(const SceneDescriptor& scene) {
    Tensor image({scene.height, scene.width, 3}, 0.0f);
    for (const auto& shape : scene.shapes) {
        const Tensor m = rasterize_shape(shape, scene.height, scene.width);
        for (std::uint32_t y = 0; y < scene.height; ++y)
            for (std::uint32_t x = 0; x < scene.width; ++x)
                if (m.at(y, x) > 0.5f)
                    for (int k = 0; k < 3; ++k)
                        image.at(y, x, k) = shape.value;
    }
    return image;
}

json to_json(const SceneDescriptor& scene) {
    json shapes = json::array();
    for (const auto& s : scene.shapes)
        shapes.push_back({{"kind", s.kind == PlantedShape::Kind::Rect ? "rect" : "ellipse"},
                          {"box", s.box.as_array()},
                          {"value", s.value},
                          {"label", s.label}});
    return {{"image_id", scene.image_id}, {"width", scene.width}, {"height", scene.height}, {"shapes", shapes}};
}

SceneDescriptor scene_from_json(const json& doc) {
    try {
        SceneDescriptor scene;
        scene.image_id = doc.at("image_id").get<std::string>();
        scene.width = doc.at("width").get<std::uint32_t>();
        scene.height = doc.at("height").get<std::uint32_t>();
        for (const auto& j : doc.at("shapes")) {
            PlantedShape s;
            const auto kind = j.at("kind").get<std::string>();
            if (kind == "rect")
                s.kind = PlantedShape::Kind::Rect;
            else if (kind == "ellipse")
                s.kind = PlantedShape::Kind::Ellipse;
            else
                throw ParseError("unknown shape kind '" + kind + "'");
            const auto b = j.at("box").get<std::array<double, 4>>();
            s.box = {b[0], b[1], b[2], b[3]};
            s.value = j.at("value").get<float>();
            s.label = j.value("label", std::string{});
            scene.shapes.push_back(std::move(s));
        }
        return scene;
    } catch (const json::exception& e) {
        throw ParseError(std::string("scene descriptor: ") + e.what());
    }
}

void save_scene(const SceneDescriptor& scene, const std::filesystem::path& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f)
        throw Error("cannot open " + path.string() + " for writing");
    f << to_json(scene).dump(2) << "\n";
}

std::shared_ptr<SceneStore> SceneStore::from_directory(const std::filesystem::path& dir) {
    auto store = std::make_shared<SceneStore>();
    if (!std::filesystem::is_directory(dir))
        throw ConfigError("scene directory " + dir.string() + " does not exist");
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir))
        if (entry.path().extension() == ".json")
            files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    for (const auto& p : files) {
        std::ifstream f(p);
        try {
            store->add(scene_from_json(json::parse(f)));
        } catch (const json::exception& e) {
            throw ParseError(p.string() + ": " + e.what());
        }
    }
    return store;
}

void SceneStore::add(SceneDescriptor scene) {
    auto id = scene.image_id;
    m_scenes[id] = std::move(scene);
}

const SceneDescriptor* SceneStore::find(const std::string& image_id) const {
    auto it = m_scenes.find(image_id);
    return it == m_scenes.end() ? nullptr : &it->second;
}

OracleSegmenter::OracleSegmenter(std::shared_ptr<const SceneStore> scenes, OracleOptions options)
    : m_scenes(std::move(scenes)), m_options(options) {}

SegmentationResult OracleSegmenter::segment(const SegmentRequest& request) {
    if (request.image.rank() < 2 || request.image.rank() > 3)
        throw BackendError(BackendError::Kind::Remote, "BAD_REQUEST",
                           "segment needs an H x W or H x W x C image, got " + dims_to_string(request.image.dims()));
    return request.mode == SegmentMode::Auto ? segment_auto(request) : segment_prompt(request);
}

SegmentationResult OracleSegmenter::segment_auto(const SegmentRequest& request) const {
    const SceneDescriptor* scene = m_scenes ? m_scenes->find(request.image_id) : nullptr;
    if (!scene)
        throw BackendError(BackendError::Kind::Remote, "BAD_REQUEST",
                           "no scene descriptor for image '" + request.image_id + "'");
    const std::uint32_t h = request.image.height(), w = request.image.width();
    // The pipeline may have resized the image; shapes follow it.
    const double sx = static_cast<double>(w) / scene->width, sy = static_cast<double>(h) / scene->height;
    SegmentationResult res;
    for (PlantedShape shape : scene->shapes) {
        shape.box = scale_box(shape.box, sx, sy);
        auto m = make_segment_mask(rasterize_shape(shape, h, w));
        if (m.area > 0)
            res.masks.push_back(std::move(m));
    }
    std::stable_sort(res.masks.begin(), res.masks.end(),
                     [](const SegmentMask& a, const SegmentMask& b) { return a.area > b.area; });
    return res;
}

SegmentationResult OracleSegmenter::segment_prompt(const SegmentRequest& request) const {
    const Tensor& img = request.image;
    const int h = static_cast<int>(img.height()), w = static_cast<int>(img.width());
    const std::uint32_t c = img.channels();

    PixelRect window{0, 0, w, h};
    PixelRect box_span{0, 0, 0, 0};
    if (request.box) {
        const Box& b = *request.box;
        const double mx = m_options.margin * b.width(), my = m_options.margin * b.height();
        window = pixel_span(Box{b.x1 - mx, b.y1 - my, b.x2 + mx, b.y2 + my}, w, h);
        box_span = pixel_span(b, w, h);
    }

    auto on = [&](int x, int y) {
        double s = 0.0;
        for (std::uint32_t k = 0; k < c; ++k)
            s += img[(static_cast<std::size_t>(y) * w + x) * c + k];
        return s / c >= m_options.threshold;
    };

    // 4-connected components inside the window, labelled in row-major discovery order.
    std::vector<int> label(static_cast<std::size_t>(w) * h, -1);
    std::vector<std::vector<std::pair<int, int>>> comps;
    for (int y = window.y1; y < window.y2; ++y)
        for (int x = window.x1; x < window.x2; ++x) {
            if (label[static_cast<std::size_t>(y) * w + x] >= 0 || !on(x, y))
                continue;
            const int id = static_cast<int>(comps.size());
            comps.emplace_back();
            std::deque<std::pair<int, int>> queue{{x, y}};
            label[static_cast<std::size_t>(y) * w + x] = id;
            while (!queue.empty()) {
                auto [px, py] = queue.front();
                queue.pop_front();
                comps[id].push_back({px, py});
                const int nx[4] = {px - 1, px + 1, px, px};
                const int ny[4] = {py, py, py - 1, py + 1};
                for (int k = 0; k < 4; ++k) {
                    if (!window.contains(nx[k], ny[k]))
                        continue;
                    auto& l = label[static_cast<std::size_t>(ny[k]) * w + nx[k]];
                    if (l < 0 && on(nx[k], ny[k])) {
                        l = id;
                        queue.push_back({nx[k], ny[k]});
                    }
                }
            }
        }

    auto component_at = [&](const PointPrompt& p) -> int {
        if (p.x < 0 || p.y < 0 || p.x >= w || p.y >= h)
            return -1;
        return label[static_cast<std::size_t>(p.y) * w + p.x];
    };

    std::vector<bool> selected(comps.size(), false);
    bool any = false;
    for (const auto& p : request.points)
        if (p.polarity == Polarity::Foreground) {
            const int id = component_at(p);
            if (id >= 0) {
                selected[static_cast<std::size_t>(id)] = true;
                any = true;
            }
        }
    if (!any && request.box) {
        long long best = 0;
        int best_id = -1;
        for (std::size_t id = 0; id < comps.size(); ++id) {
            long long overlap = 0;
            for (auto [px, py] : comps[id])
                overlap += box_span.contains(px, py) ? 1 : 0;
            if (overlap > best) {
                best = overlap;
                best_id = static_cast<int>(id);
            }
        }
        if (best_id >= 0)
            selected[static_cast<std::size_t>(best_id)] = true;
    }
    for (const auto& p : request.points)
        if (p.polarity == Polarity::Background) {
            const int id = component_at(p);
            if (id >= 0)
                selected[static_cast<std::size_t>(id)] = false;
        }

    Tensor mask({img.height(), img.width()}, 0.0f);
    for (std::size_t id = 0; id < comps.size(); ++id)
        if (selected[id])
            for (auto [px, py] : comps[id])
                mask.at(py, px) = 1.0f;
    SegmentationResult res;
    res.masks.push_back(make_segment_mask(std::move(mask)));
    return res;
}

BackendSet make_mock_backends(std::uint64_t seed, std::shared_ptr<const SceneStore> scenes, NoiseScript script) {
    BackendSet set;
    set.denoiser = std::make_shared<MockDenoiser>(seed, script);
    set.codec = std::make_shared<MockCodec>();
    set.segmenter = std::make_shared<OracleSegmenter>(std::move(scenes));
    return set;
}

}  // namespace xsyn::backends
