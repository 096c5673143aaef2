// SPDX-License-Identifier: Apache-2.0
//
// xsyn command line: groups | gen | refine | inspect | serve-mock.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"
#include "xsyn/car.hpp"
#include "xsyn/errors.hpp"
#include "xsyn/image_io.hpp"
#include "xsyn/mock_backends.hpp"
#include "xsyn/pipeline.hpp"
#include "xsyn/wire.hpp"
#include "xsyn/xten.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace xsyn;

namespace {

constexpr const char* kEndpointEnv = "XSYN_BACKEND_ENDPOINT";

std::atomic<bool> g_stop{false};

void on_signal(int) {
    g_stop = true;
}

class UsageError : public Error {
public:
    using Error::Error;
};

void emit_error(const std::string& type, const std::string& message) {
    std::cerr << json{{"error", {{"type", type}, {"message", message}}}}.dump() << std::endl;
}

std::string error_type(const std::exception& e) {
    if (dynamic_cast<const UsageError*>(&e))
        return "usage";
    if (dynamic_cast<const ConfigError*>(&e))
        return "config";
    if (dynamic_cast<const ParseError*>(&e))
        return "parse";
    if (dynamic_cast<const IntegrityError*>(&e))
        return "integrity";
    if (dynamic_cast<const BackendError*>(&e))
        return "backend";
    return "runtime";
}

// Backend flags shared by gen, refine and serve-mock.
struct BackendOptions {
    std::string backend = "mock";
    std::string endpoint;
    std::string scenes;
    std::uint64_t mock_seed = 0;
    std::string mock_script = "value-noise";
    std::string record;
    std::string replay;
    int retries = 3;
    int max_in_flight = 4;
    int timeout_ms = 60000;
};

void add_backend_flags(CLI::App* cmd, BackendOptions& o, bool remote) {
    if (remote) {
        cmd->add_option("--backend", o.backend, "mock | remote")
            ->check(CLI::IsMember({"mock", "remote"}))
            ->capture_default_str();
        cmd->add_option("--endpoint", o.endpoint,
                        std::string("Remote backend address host:port (default: $") + kEndpointEnv + ")");
        cmd->add_option("--record", o.record, "Append every backend exchange to this JSONL transcript");
        cmd->add_option("--replay", o.replay, "Answer backend calls from a recorded transcript");
        cmd->add_option("--retries", o.retries, "Remote retries per request")->capture_default_str();
        cmd->add_option("--max-in-flight", o.max_in_flight, "Concurrent remote requests")->capture_default_str();
        cmd->add_option("--timeout-ms", o.timeout_ms, "Remote request timeout")->capture_default_str();
    }
    cmd->add_option("--scenes", o.scenes, "Scene descriptors for the mock segmenter (default: <dataset dir>/scenes)");
    cmd->add_option("--mock-seed", o.mock_seed, "Seed of the mock denoiser")->capture_default_str();
    cmd->add_option("--mock-script", o.mock_script, "value-noise | zero")
        ->check(CLI::IsMember({"value-noise", "zero"}))
        ->capture_default_str();
}

std::shared_ptr<backends::SceneStore> load_scenes(const std::string& dir, const fs::path& fallback) {
    if (!dir.empty())
        return backends::SceneStore::from_directory(dir);
    if (!fallback.empty() && fs::is_directory(fallback))
        return backends::SceneStore::from_directory(fallback);
    return std::make_shared<backends::SceneStore>();
}

backends::BackendSet make_backends(const BackendOptions& o, const fs::path& default_scenes) {
    std::shared_ptr<wire::Transport> transport;
    if (!o.replay.empty()) {
        transport = std::make_shared<wire::ReplayTransport>(o.replay);
    } else if (o.backend == "remote") {
        wire::HttpOptions http;
        http.endpoint = o.endpoint;
        if (http.endpoint.empty())
            if (const char* env = std::getenv(kEndpointEnv))
                http.endpoint = env;
        if (http.endpoint.empty())
            throw UsageError(std::string("--backend remote needs --endpoint or $") + kEndpointEnv);
        http.retries = o.retries;
        http.max_in_flight = o.max_in_flight;
        http.timeout_ms = o.timeout_ms;
        transport = std::make_shared<wire::HttpTransport>(http);
    }

    if (!transport && o.record.empty())
        return backends::make_mock_backends(o.mock_seed, load_scenes(o.scenes, default_scenes),
                                            backends::noise_script_from_string(o.mock_script));
    if (!transport) {
        // Recording the in-process mocks: route them through the wire codecs.
        auto mocks = backends::make_mock_backends(o.mock_seed, load_scenes(o.scenes, default_scenes),
                                                  backends::noise_script_from_string(o.mock_script));
        transport = std::make_shared<wire::LocalTransport>(std::make_shared<wire::Dispatcher>(mocks));
    }
    if (!o.record.empty())
        transport = std::make_shared<wire::RecordingTransport>(transport, o.record);
    return wire::make_remote_backends(transport);
}

Tensor load_image_or_tensor(const fs::path& path) {
    if (path.extension() == ".xten")
        return xten::read_file(path);
    return image::read_png(path);
}

void write_text(const std::string& path, const std::string& text) {
    if (path.empty() || path == "-") {
        std::cout << text;
        return;
    }
    std::ofstream f(path, std::ios::binary);
    if (!f)
        throw Error("cannot open " + path + " for writing");
    f << text;
}

// --- groups ---

struct GroupsOptions {
    std::string dataset;
    std::vector<double> boundaries{10000.0, 25000.0};
    std::string out = "-";
};

int run_groups(const GroupsOptions& o) {
    if (o.boundaries.size() != 2)
        throw UsageError("--boundaries takes exactly two values");
    const auto ds = data::load_dataset(o.dataset);
    std::vector<std::string> warnings;
    const auto means = data::mean_area_per_class(ds, &warnings);
    for (const auto& w : warnings)
        std::cerr << json{{"warning", w}}.dump() << std::endl;
    const auto table = data::build_class_groups(means, o.boundaries[0], o.boundaries[1]);
    auto doc = data::to_json(table);
    doc["mean_areas"] = means;
    write_text(o.out, doc.dump(2) + "\n");
    return 0;
}

// --- gen ---

struct GenOptions {
    std::string dataset;
    std::string out = "out";
    std::string image_root;
    std::string groups;
    std::string mode = "mod";
    std::string strategy = "mps";
    std::string period = "final";
    std::string space = "latent";
    bool no_bom = false;
    bool print_config = false;
    std::string timings;
    BackendOptions backend;
};

int run_gen(GenOptions o, pipeline::PipelineConfig cfg) {
    cfg.mode = grounding::mode_from_string(o.mode);
    cfg.strategy = pipeline::point_strategy_from_string(o.strategy);
    cfg.period = bom::period_from_string(o.period);
    cfg.space = bom::space_from_string(o.space);
    cfg.bom = !o.no_bom;
    cfg.backend = o.backend.replay.empty() ? o.backend.backend : "replay";
    cfg.validate();
    if (o.print_config) {
        std::cout << pipeline::to_json(cfg).dump(2) << "\n";
        return 0;
    }
    if (o.dataset.empty())
        throw UsageError("gen needs --dataset");

    const fs::path dataset_path(o.dataset);
    const fs::path dataset_dir = dataset_path.has_parent_path() ? dataset_path.parent_path() : fs::path(".");
    const auto ds = data::load_dataset(dataset_path);

    pipeline::RunInputs inputs;
    inputs.image_root = o.image_root.empty() ? dataset_dir : fs::path(o.image_root);
    inputs.out_dir = o.out;
    if (!o.groups.empty())
        inputs.class_groups = data::load_class_groups(o.groups);
    else if (cfg.mode == grounding::Mode::Add)
        throw UsageError("gen --mode add needs --groups (see `xsyn groups`)");

    const auto backends = make_backends(o.backend, dataset_dir / "scenes");
    const auto result = pipeline::run_xsyn(ds, cfg, backends, inputs);

    std::size_t generated = 0;
    for (const auto& e : result.manifest.entries)
        generated += e.generated ? 1 : 0;
    std::cout << json{{"generated", generated},
                      {"skipped", result.manifest.entries.size() - generated},
                      {"manifest_digest", result.manifest.digest},
                      {"out", o.out}}
                     .dump()
              << std::endl;

    json timing{{"seconds", result.seconds}};
    json per_image = json::object();
    for (const auto& e : result.manifest.entries)
        per_image[e.image_id] = e.seconds;
    timing["images"] = per_image;
    std::cerr << json{{"timing", timing}}.dump() << std::endl;
    if (!o.timings.empty())
        write_text(o.timings, timing.dump(2) + "\n");
    return 0;
}

// --- refine ---

struct RefineOptions {
    std::string image;
    std::string attention;
    std::vector<double> box;
    int divisions = 4;
    std::string strategy = "mps";
    int topk = 15;
    BackendOptions backend;
};

int run_refine(const RefineOptions& o) {
    if (o.box.size() != 4)
        throw UsageError("--box takes x1 y1 x2 y2");
    const Tensor img = load_image_or_tensor(o.image);
    Tensor attention = xten::read_file(o.attention);
    if (attention.rank() == 3 && attention.channels() == 1)
        attention = Tensor({attention.height(), attention.width()}, attention.values());
    if (attention.rank() != 2)
        throw DimensionError("attention must be an H x W map, got " + dims_to_string(attention.dims()));
    if (attention.height() != img.height() || attention.width() != img.width())
        attention = latent::upsample_nearest(attention, img.height(), img.width());

    const auto backends = make_backends(o.backend, fs::path(o.image).parent_path() / "scenes");
    const Box box{o.box[0], o.box[1], o.box[2], o.box[3]};
    const auto region = car::discriminative_region(attention, box, *backends.segmenter);
    const auto points = pipeline::point_strategy_from_string(o.strategy) == pipeline::PointStrategy::Mps
                            ? car::mps_sample(region, attention, o.divisions)
                            : car::topk_sample(region, attention, o.topk);
    const auto refined = car::refine_annotation(img, {points.points, box}, *backends.segmenter);

    json pts = json::array();
    for (const auto& p : points.points)
        pts.push_back({{"x", p.x}, {"y", p.y}, {"label", p.polarity == Polarity::Foreground ? "fg" : "bg"}});
    std::cout << json{{"box", refined.box.as_array()},
                      {"grounding_box", box.as_array()},
                      {"points", pts},
                      {"region_fallback", region.fallback},
                      {"points_truncated", points.truncated},
                      {"missing_background", points.missing_background},
                      {"empty_segment", refined.fallback}}
                     .dump(2)
              << std::endl;
    return 0;
}

// --- inspect ---

struct InspectOptions {
    std::vector<std::string> inputs;
    std::string out;
    int tile = 0;
};

int run_inspect(const InspectOptions& o) {
    // One row per file; one tile per channel, each min-max normalised.
    std::vector<std::vector<Tensor>> rows;
    json summary = json::array();
    for (const auto& path : o.inputs) {
        const Tensor t = load_image_or_tensor(path);
        if (t.rank() < 2 || t.rank() > 3)
            throw DimensionError(path + ": inspect handles H x W and H x W x C tensors");
        std::vector<Tensor> tiles;
        json stats = json::array();
        for (std::uint32_t c = 0; c < t.channels(); ++c) {
            Tensor ch({t.height(), t.width()});
            for (std::uint32_t y = 0; y < t.height(); ++y)
                for (std::uint32_t x = 0; x < t.width(); ++x)
                    ch.at(y, x) = t.rank() == 2 ? t.at(y, x) : t.at(y, x, c);
            const auto [lo, hi] = std::minmax_element(ch.values().begin(), ch.values().end());
            stats.push_back({{"min", *lo}, {"max", *hi}});
            Tensor n = latent::normalize_map(ch);
            if (o.tile > 0)
                n = latent::upsample_nearest(n, static_cast<std::uint32_t>(o.tile), static_cast<std::uint32_t>(o.tile));
            tiles.push_back(std::move(n));
        }
        summary.push_back({{"file", path}, {"dims", t.dims()}, {"channels", stats}});
        rows.push_back(std::move(tiles));
    }
    if (!o.out.empty()) {
        constexpr std::uint32_t gap = 2;
        std::uint32_t width = 0, height = 0;
        for (const auto& row : rows) {
            std::uint32_t w = 0, h = 0;
            for (const auto& t : row) {
                w += t.width() + gap;
                h = std::max(h, t.height());
            }
            width = std::max(width, w);
            height += h + gap;
        }
        Tensor grid({height, width}, 0.0f);
        std::uint32_t oy = 0;
        for (const auto& row : rows) {
            std::uint32_t ox = 0, h = 0;
            for (const auto& t : row) {
                for (std::uint32_t y = 0; y < t.height(); ++y)
                    for (std::uint32_t x = 0; x < t.width(); ++x)
                        grid.at(oy + y, ox + x) = t.at(y, x);
                ox += t.width() + gap;
                h = std::max(h, t.height());
            }
            oy += h + gap;
        }
        image::write_png(o.out, grid);
    }
    std::cout << summary.dump(2) << std::endl;
    return 0;
}

// --- serve-mock ---

struct ServeOptions {
    std::string host = "127.0.0.1";
    int port = 8765;
    BackendOptions backend;
};

int run_serve(const ServeOptions& o) {
    auto mocks = backends::make_mock_backends(o.backend.mock_seed, load_scenes(o.backend.scenes, {}),
                                              backends::noise_script_from_string(o.backend.mock_script));
    wire::RpcServer server(std::make_shared<wire::Dispatcher>(mocks));
    const int port = server.start(o.host, o.port);
    std::cout << json{{"listening", o.host + ":" + std::to_string(port)}, {"port", port}}.dump() << std::endl;
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    while (!g_stop)
        std::this_thread::sleep_for(std::chrono::milliseconds(50));
    server.stop();
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"xsyn: synthetic X-ray image generation with refined and occluded annotations"};
    app.require_subcommand(1);

    GroupsOptions groups;
    auto* groups_cmd = app.add_subcommand("groups", "Compute mean box area per class and split classes into groups");
    groups_cmd->add_option("--dataset", groups.dataset, "Annotation JSON")->required();
    groups_cmd->add_option("--boundaries", groups.boundaries, "Area boundaries lo hi (pixels^2)")
        ->expected(2)
        ->capture_default_str();
    groups_cmd->add_option("--out", groups.out, "Output file, - for stdout")->capture_default_str();

    GenOptions gen;
    pipeline::PipelineConfig cfg;
    auto* gen_cmd = app.add_subcommand("gen", "Generate a synthetic dataset");
    gen_cmd->add_option("--dataset", gen.dataset, "Annotation JSON");
    gen_cmd->add_option("--out", gen.out, "Output directory")->capture_default_str();
    gen_cmd->add_option("--image-root", gen.image_root, "Directory image file names are relative to (default: dataset dir)");
    gen_cmd->add_option("--groups", gen.groups, "Class-group table (required for --mode add)");
    gen_cmd->add_option("--mode", gen.mode, "mod | add")->check(CLI::IsMember({"mod", "add"}))->capture_default_str();
    gen_cmd->add_option("--alpha", cfg.alpha, "Occlusion strength")->capture_default_str();
    gen_cmd->add_option("-n,--divisions", cfg.divisions, "Median point sampling depth")->capture_default_str();
    gen_cmd->add_option("--point-strategy", gen.strategy, "mps | topk")
        ->check(CLI::IsMember({"mps", "topk"}))
        ->capture_default_str();
    gen_cmd->add_option("--topk", cfg.topk, "Foreground points for --point-strategy topk")->capture_default_str();
    gen_cmd->add_option("-d,--iou-threshold", cfg.iou_threshold, "Idle-region IoU threshold")->capture_default_str();
    gen_cmd->add_option("--min-box-ratio", cfg.min_box_ratio, "Drop boxes smaller than this fraction of the image")
        ->capture_default_str();
    gen_cmd->add_option("--steps", cfg.sampler.steps, "Denoising steps")->capture_default_str();
    gen_cmd->add_option("--guidance", cfg.sampler.guidance_scale, "Classifier-free guidance scale")
        ->capture_default_str();
    gen_cmd->add_option("--seed", cfg.seed, "Run seed")->capture_default_str();
    gen_cmd->add_flag("--no-bom", gen.no_bom, "Skip background occlusion");
    gen_cmd->add_option("--bom-period", gen.period, "final | every-step")
        ->check(CLI::IsMember({"final", "every-step"}))
        ->capture_default_str();
    gen_cmd->add_option("--bom-space", gen.space, "latent | pixel")
        ->check(CLI::IsMember({"latent", "pixel"}))
        ->capture_default_str();
    gen_cmd->add_option("--image-size", cfg.image_size, "Working resolution (square)")->capture_default_str();
    gen_cmd->add_option("-j,--jobs", cfg.jobs, "Images processed in parallel")->capture_default_str();
    gen_cmd->add_flag("--debug", cfg.debug, "Write intermediate tensors to <out>/debug");
    gen_cmd->add_option("--timings", gen.timings, "Write wall-clock timings here (outside the output tree)");
    gen_cmd->add_flag("--print-config", gen.print_config, "Print the effective configuration and exit");
    add_backend_flags(gen_cmd, gen.backend, true);

    RefineOptions refine;
    auto* refine_cmd = app.add_subcommand("refine", "Refine one box from an image and an attention map");
    refine_cmd->add_option("--image", refine.image, "Image (.png or .xten)")->required();
    refine_cmd->add_option("--attention", refine.attention, "Attention map (.xten, H x W)")->required();
    refine_cmd->add_option("--box", refine.box, "Grounding box x1 y1 x2 y2")->expected(4)->required();
    refine_cmd->add_option("-n,--divisions", refine.divisions, "Median point sampling depth")->capture_default_str();
    refine_cmd->add_option("--point-strategy", refine.strategy, "mps | topk")
        ->check(CLI::IsMember({"mps", "topk"}))
        ->capture_default_str();
    refine_cmd->add_option("--topk", refine.topk, "Foreground points for topk")->capture_default_str();
    add_backend_flags(refine_cmd, refine.backend, true);

    InspectOptions inspect;
    auto* inspect_cmd = app.add_subcommand("inspect", "Summarise tensors and render them as an image grid");
    inspect_cmd->add_option("inputs", inspect.inputs, ".xten or .png files")->required();
    inspect_cmd->add_option("--out", inspect.out, "Grid PNG to write");
    inspect_cmd->add_option("--tile", inspect.tile, "Resize every tile to N x N (0 = native)")->capture_default_str();

    ServeOptions serve;
    auto* serve_cmd = app.add_subcommand("serve-mock", "Serve the mock backends over the wire protocol");
    serve_cmd->add_option("--host", serve.host, "Bind address")->capture_default_str();
    serve_cmd->add_option("--port", serve.port, "Port, 0 = any free port")->capture_default_str();
    add_backend_flags(serve_cmd, serve.backend, false);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        emit_error("usage", e.what());
        return 2;
    }

    try {
        if (*groups_cmd)
            return run_groups(groups);
        if (*gen_cmd)
            return run_gen(gen, cfg);
        if (*refine_cmd)
            return run_refine(refine);
        if (*inspect_cmd)
            return run_inspect(inspect);
        if (*serve_cmd)
            return run_serve(serve);
    } catch (const UsageError& e) {
        emit_error("usage", e.what());
        return 2;
    } catch (const ConfigError& e) {
        emit_error("config", e.what());
        return 2;
    } catch (const std::exception& e) {
        emit_error(error_type(e), e.what());
        return 1;
    }
    return 0;
}
