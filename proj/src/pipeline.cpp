// SPDX-License-Identifier: Apache-2.0

#include "xsyn/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <fstream>
#include <thread>

#include "xsyn/car.hpp"
#include "xsyn/digest.hpp"
#include "xsyn/errors.hpp"
#include "xsyn/image_io.hpp"
#include "xsyn/rng.hpp"
#include "xsyn/xten.hpp"

namespace xsyn::pipeline {

using nlohmann::json;

namespace {

json box_json(const Box& b) {
    return json::array({b.x1, b.y1, b.x2, b.y2});
}

// Shortest decimal that round-trips the float, so 0.3f is recorded as 0.3.
double float_json(float v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::strtod(std::string(buf, res.ptr).c_str(), nullptr);
}

json rect_json(const PixelRect& r) {
    return json::array({r.x1, r.y1, r.x2, r.y2});
}

void add_flag(std::vector<std::string>& flags, const std::string& flag) {
    if (std::find(flags.begin(), flags.end(), flag) == flags.end())
        flags.push_back(flag);
}

std::string describe(const std::exception& e) {
    if (dynamic_cast<const NoForeground*>(&e))
        return "NoForeground";
    if (dynamic_cast<const NoIdleRegion*>(&e))
        return "NoIdleRegion";
    std::string kind = "Error";
    if (dynamic_cast<const BackendError*>(&e))
        kind = "BackendError";
    else if (dynamic_cast<const NumericalError*>(&e))
        kind = "NumericalError";
    else if (dynamic_cast<const ParseError*>(&e))
        kind = "ParseError";
    else if (dynamic_cast<const IntegrityError*>(&e))
        kind = "IntegrityError";
    else if (dynamic_cast<const DimensionError*>(&e))
        kind = "DimensionError";
    else if (dynamic_cast<const ConfigError*>(&e))
        kind = "ConfigError";
    return kind + ": " + e.what();
}

void write_bytes(const std::filesystem::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f)
        throw Error("cannot open " + path.string() + " for writing");
    f << text;
}

}  // namespace

std::string to_string(PointStrategy s) {
    return s == PointStrategy::Mps ? "mps" : "topk";
}

PointStrategy point_strategy_from_string(std::string_view s) {
    if (s == "mps")
        return PointStrategy::Mps;
    if (s == "topk")
        return PointStrategy::TopK;
    throw ConfigError("unknown point strategy '" + std::string(s) + "' (mps|topk)");
}

void PipelineConfig::validate() const {
    if (!(alpha >= 0.0f && alpha <= 1.0f))
        throw ConfigError("alpha must lie in [0, 1]");
    if (divisions < 0 || divisions > 16)
        throw ConfigError("divisions must lie in 0..16");
    if (topk < 1)
        throw ConfigError("topk must be at least 1");
    if (!(iou_threshold > 0.0 && iou_threshold <= 1.0))
        throw ConfigError("iou threshold must lie in (0, 1]");
    if (!(min_box_ratio >= 0.0 && min_box_ratio < 1.0))
        throw ConfigError("min box ratio must lie in [0, 1)");
    if (sampler.steps < 1 || sampler.steps > 1000)
        throw ConfigError("steps must lie in 1..1000");
    if (!(sampler.guidance_scale >= 0.0f))
        throw ConfigError("guidance scale must be non-negative");
    if (image_size < latent::kDownscale || image_size % latent::kDownscale != 0)
        throw ConfigError("image size must be a positive multiple of " + std::to_string(latent::kDownscale));
    if (jobs < 1)
        throw ConfigError("jobs must be at least 1");
    if (bom && space == bom::Space::Pixel && period == bom::Period::EveryStep)
        throw ConfigError("pixel-space occlusion can only be applied to the final result");
}

json to_json(const PipelineConfig& cfg) {
    return {{"mode", grounding::to_string(cfg.mode)},
            {"alpha", float_json(cfg.alpha)},
            {"divisions", cfg.divisions},
            {"point_strategy", to_string(cfg.strategy)},
            {"topk", cfg.topk},
            {"iou_threshold", cfg.iou_threshold},
            {"min_box_ratio", cfg.min_box_ratio},
            {"steps", cfg.sampler.steps},
            {"guidance_scale", float_json(cfg.sampler.guidance_scale)},
            {"seed", cfg.seed},
            {"bom", cfg.bom},
            {"bom_period", bom::to_string(cfg.period)},
            {"bom_space", bom::to_string(cfg.space)},
            {"image_size", cfg.image_size},
            {"debug", cfg.debug},
            {"backend", cfg.backend}};
}

std::string safe_file_stem(const std::string& image_id) {
    std::string out;
    for (char c : image_id) {
        const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '-' ||
                        c == '_' || c == '.';
        out += ok ? c : '_';
    }
    if (out.empty() || out == "." || out == "..")
        out = "_" + out;
    return out;
}

json RunManifest::to_json() const {
    json entries_json = json::array();
    for (const auto& e : entries) {
        json j{{"image_id", e.image_id},
               {"status", e.generated ? "generated" : "skipped"},
               {"flags", e.flags},
               {"annotations_in", e.input_annotations},
               {"annotations_kept", e.filtered_annotations},
               {"annotations_out", e.annotations.size()},
               {"details", e.details}};
        if (!e.generated)
            j["reason"] = e.reason;
        else
            j["output"] = {{"file", e.output_file}, {"sha256", e.output_sha256}};
        entries_json.push_back(std::move(j));
    }
    json doc{{"format", "xsyn-run/1"},
             {"config", config},
             {"backend", backend},
             {"choices",
              {{"attention_maps", "latent resolution, averaged over steps, min-max normalised, nearest upsampled"},
               {"mod_entity_cap", nullptr},
               {"inpaint_mask", "known region = outside the union of grounding boxes, average-pooled"}}},
             {"entries", entries_json},
             {"outputs", {{"annotations.json", annotations_sha256}}}};
    if (!digest.empty())
        doc["digest"] = digest;
    return doc;
}

ImageResult process_image(const data::ImageRecord& record, const Tensor& pixels,
                          const std::vector<data::BoxAnnotation>& annotations, const PipelineConfig& cfg,
                          const backends::BackendSet& backends, const std::optional<data::ClassGroupTable>& groups) {
    ImageResult result;
    ImageOutcome& out = result.outcome;
    out.image_id = record.id;
    out.input_annotations = annotations.size();
    auto& flags = out.flags;
    json& details = out.details;

    const auto size = static_cast<std::uint32_t>(cfg.image_size);
    if (pixels.rank() != 3 || pixels.channels() != 3)
        throw DimensionError("image must be H x W x 3, got " + dims_to_string(pixels.dims()));
    if (pixels.width() != static_cast<std::uint32_t>(record.width) ||
        pixels.height() != static_cast<std::uint32_t>(record.height))
        throw IntegrityError("image '" + record.id + "' is " + std::to_string(pixels.width()) + "x" +
                             std::to_string(pixels.height()) + " on disk but " + std::to_string(record.width) + "x" +
                             std::to_string(record.height) + " in the dataset");

    // Work at image_size x image_size; boxes follow the resize.
    const double sx = static_cast<double>(size) / record.width, sy = static_cast<double>(size) / record.height;
    Tensor image = (pixels.width() == size && pixels.height() == size)
                       ? pixels
                       : image::resize_bilinear(pixels, size, size);
    data::ImageRecord work = record;
    work.width = work.height = static_cast<int>(size);
    std::vector<data::BoxAnnotation> scaled;
    for (auto a : annotations) {
        a.box = clamp_box(scale_box(a.box, sx, sy), size, size);
        scaled.push_back(std::move(a));
    }
    if (sx != 1.0 || sy != 1.0)
        details["resized_from"] = json::array({record.width, record.height});

    const auto filtered = data::filter_small_boxes(scaled, work, cfg.min_box_ratio);
    out.filtered_annotations = filtered.size();

    auto& denoiser = *backends.denoiser;
    auto& codec = *backends.codec;
    auto& segmenter = *backends.segmenter;

    const bool add = cfg.mode == grounding::Mode::Add;
    if (!add && filtered.empty())
        throw NoForeground();

    SegmentationResult auto_seg;
    if (add || cfg.bom) {
        backends::SegmentRequest req;
        req.image = image;
        req.mode = backends::SegmentMode::Auto;
        req.image_id = record.id;
        auto_seg = segmenter.segment(req);
        backends::check_segment_response(req, auto_seg);
        details["auto_masks"] = auto_seg.masks.size();
    }

    grounding::GroundingCondition cond;
    std::optional<Box> added_box;
    if (add) {
        if (!groups)
            throw ConfigError("ADD mode needs a class-group table");
        const auto candidates =
            grounding::candidate_idle_regions(auto_seg, filtered, cfg.iou_threshold, cfg.min_box_ratio, work);
        details["idle_candidates"] = candidates.size();
        Rng idle_rng(derive_key(cfg.seed, record.id, "idle"));
        const Box idle = grounding::select_idle_region(candidates, idle_rng);
        // Class groups were built from areas at the dataset's own resolution.
        Rng cat_rng(derive_key(cfg.seed, record.id, "category"));
        const auto category =
            grounding::select_category_for_region(scale_box(idle, 1.0 / sx, 1.0 / sy), *groups, cat_rng);
        cond = grounding::build_g_add(idle, category);
        added_box = idle;
        details["idle_region"] = box_json(idle);
        details["category"] = category;
    } else {
        cond = grounding::build_g_mod(filtered);
    }
    details["prompt"] = cond.prompt;

    std::vector<Box> generate;
    for (const auto& e : cond.entities)
        generate.push_back(e.box);
    const auto mask = latent::make_inpaint_mask(generate, size, size);
    const Tensor z0_input = codec.encode(image);
    const int lw = static_cast<int>(z0_input.width()), lh = static_cast<int>(z0_input.height());

    // The occlusion plan is fixed before sampling so that every-step occlusion
    // and final occlusion act on the same geometry.
    std::optional<bom::OccluderSpec> occ;
    bom::OcclusionPlan plan;
    if (cfg.bom) {
        Rng occ_rng(derive_key(cfg.seed, record.id, "occluder"));
        occ = bom::select_occluder(auto_seg, filtered, added_box, cfg.iou_threshold, cfg.min_box_ratio, work,
                                   occ_rng);
        if (!occ) {
            add_flag(flags, "no_occluder");
        } else {
            std::vector<Box> targets;
            for (const auto& a : filtered)
                if (std::find(targets.begin(), targets.end(), a.box) == targets.end())
                    targets.push_back(a.box);
            if (added_box && std::find(targets.begin(), targets.end(), *added_box) == targets.end())
                targets.push_back(*added_box);
            Rng perturb_rng(derive_key(cfg.seed, record.id, "perturb"));
            int skipped = 0;
            plan = bom::build_plan(targets, *occ, cfg.alpha, cfg.period, cfg.space, lw, lh, perturb_rng,
                                   latent::kDownscale, &skipped);
            if (skipped > 0)
                add_flag(flags, "bom_target_skipped");
            json tj = json::array();
            for (const auto& t : plan.targets)
                tj.push_back(rect_json(t));
            details["occluder"] = {{"box", box_json(occ->pixel_box)}, {"latent_box", rect_json(occ->latent_box)}};
            details["occlusion_targets"] = tj;
        }
    }

    latent::SamplerConfig scfg = cfg.sampler;
    scfg.seed = derive_key(cfg.seed, record.id, "sampler");
    latent::SamplingHooks hooks;
    const bool every_step = occ && cfg.period == bom::Period::EveryStep;
    if (every_step)
        hooks.after_step = bom::every_step_hook(plan, *occ);
    const auto sampled = latent::run_sampling(z0_input, mask, cond, scfg, denoiser, hooks);

    // With every-step occlusion z_0 is already the hidden latent.
    const Tensor original = codec.decode(sampled.z0);

    const bool have_attention = denoiser.manifest().capabilities.attention;
    if (!have_attention)
        add_flag(flags, "no_attention");
    std::vector<Box> refined;
    json car_json = json::array();
    for (std::size_t i = 0; i < cond.entities.size(); ++i) {
        const auto& entity = cond.entities[i];
        if (!have_attention) {
            refined.push_back(entity.box);
            continue;
        }
        const Tensor& map = sampled.attention[i].map;
        const auto region = car::discriminative_region(map, entity.box, segmenter);
        const auto points = cfg.strategy == PointStrategy::Mps ? car::mps_sample(region, map, cfg.divisions)
                                                              : car::topk_sample(region, map, cfg.topk);
        const auto ref = car::refine_annotation(original, {points.points, entity.box}, segmenter);
        if (region.fallback)
            add_flag(flags, "car_region_fallback");
        if (points.truncated)
            add_flag(flags, "car_points_truncated");
        if (points.missing_background)
            add_flag(flags, "car_missing_background");
        if (ref.fallback)
            add_flag(flags, "car_empty_segment");
        refined.push_back(ref.box);
        car_json.push_back({{"entity", entity.text},
                            {"grounding_box", box_json(entity.box)},
                            {"points", points.points.size()},
                            {"refined_box", box_json(ref.box)}});
    }
    details["car"] = car_json;

    Tensor hidden;
    Tensor hidden_latent;
    if (!occ || every_step) {
        hidden = original;
    } else if (cfg.space == bom::Space::Latent) {
        hidden_latent = bom::recombine(sampled.z0, plan, *occ);
        hidden = codec.decode(hidden_latent);
    } else {
        hidden = bom::occlude_pixel_space(original, plan, *occ);
    }

    if (add) {
        out.annotations = filtered;
        out.annotations.push_back({record.id, cond.entities.front().text, refined.front()});
    } else {
        for (std::size_t i = 0; i < filtered.size(); ++i)
            out.annotations.push_back({record.id, filtered[i].class_name, refined[i]});
    }
    for (auto& a : out.annotations)
        a.box = clamp_box(a.box, size, size);

    if (cfg.debug) {
        result.debug_tensors.emplace_back("z0_input", z0_input);
        result.debug_tensors.emplace_back("mask", mask.latent);
        result.debug_tensors.emplace_back("z0", sampled.z0);
        if (!hidden_latent.empty())
            result.debug_tensors.emplace_back("z0_hidden", hidden_latent);
        for (std::size_t i = 0; i < sampled.attention.size(); ++i)
            result.debug_tensors.emplace_back("attention" + std::to_string(i), sampled.attention[i].map);
    }

    result.image = std::move(hidden);
    out.generated = true;
    return result;
}

RunOutput run_xsyn(const data::DetectionDataset& ds, const PipelineConfig& cfg, const backends::BackendSet& backends,
                   const RunInputs& inputs) {
    const auto started = std::chrono::steady_clock::now();
    cfg.validate();
    ds.validate();
    if (!backends.denoiser || !backends.codec || !backends.segmenter)
        throw ConfigError("pipeline needs a denoiser, a codec and a segmenter");
    if (cfg.mode == grounding::Mode::Add && !inputs.class_groups)
        throw ConfigError("ADD mode needs a class-group table (--groups)");

    // Batch-level backend check: a bad manifest fails the run, not each image.
    const auto manifest = backends.denoiser->manifest();
    latent::NoiseSchedule check(manifest);
    if (manifest.downscale != latent::kDownscale)
        throw ConfigError("backend downscale " + std::to_string(manifest.downscale) + " is not supported");

    const auto images_dir = inputs.out_dir / "images";
    const auto debug_dir = inputs.out_dir / "debug";
    std::filesystem::create_directories(images_dir);
    if (cfg.debug)
        std::filesystem::create_directories(debug_dir);

    std::vector<ImageOutcome> outcomes(ds.images.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next.fetch_add(1); i < ds.images.size(); i = next.fetch_add(1)) {
            const auto& rec = ds.images[i];
            const auto t0 = std::chrono::steady_clock::now();
            ImageOutcome outcome;
            outcome.image_id = rec.id;
            const auto anns = ds.annotations_for(rec.id);
            outcome.input_annotations = anns.size();
            try {
                const Tensor pixels = image::read_png(inputs.image_root / rec.file_name);
                auto res = process_image(rec, pixels, anns, cfg, backends, inputs.class_groups);
                outcome = std::move(res.outcome);
                const auto stem = safe_file_stem(rec.id);
                const auto png = image::encode_png(res.image);
                outcome.output_file = "images/" + stem + ".png";
                outcome.output_sha256 = sha256_hex(png);
                {
                    std::ofstream f(images_dir / (stem + ".png"), std::ios::binary);
                    if (!f)
                        throw Error("cannot write " + (images_dir / (stem + ".png")).string());
                    f.write(reinterpret_cast<const char*>(png.data()), static_cast<std::streamsize>(png.size()));
                }
                for (const auto& [name, t] : res.debug_tensors)
                    xten::write_file(debug_dir / (stem + "." + name + ".xten"), t);
            } catch (const std::exception& e) {
                outcome.generated = false;
                outcome.reason = describe(e);
                outcome.annotations.clear();
            }
            outcome.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            outcomes[i] = std::move(outcome);
        }
    };
    std::vector<std::thread> pool;
    const int threads = std::min<int>(cfg.jobs, std::max<int>(1, static_cast<int>(ds.images.size())));
    for (int t = 1; t < threads; ++t)
        pool.emplace_back(worker);
    worker();
    for (auto& t : pool)
        t.join();

    RunOutput result;
    auto& out_ds = result.dataset;
    out_ds.class_names = ds.class_names;
    for (std::size_t i = 0; i < ds.images.size(); ++i) {
        const auto& o = outcomes[i];
        if (!o.generated)
            continue;
        data::ImageRecord rec = ds.images[i];
        rec.width = rec.height = cfg.image_size;
        rec.file_name = o.output_file;
        out_ds.images.push_back(rec);
        out_ds.annotations.insert(out_ds.annotations.end(), o.annotations.begin(), o.annotations.end());
    }
    out_ds.validate();
    const auto annotations_text = data::serialize(out_ds);
    write_bytes(inputs.out_dir / "annotations.json", annotations_text);

    auto& rm = result.manifest;
    rm.config = to_json(cfg);
    rm.backend = {{"backend_id", manifest.backend_id},
                  {"protocol_version", manifest.protocol_version},
                  {"schedule_digest", manifest.schedule_digest}};
    rm.entries = std::move(outcomes);
    rm.annotations_sha256 = sha256_hex(annotations_text);
    rm.digest = sha256_hex(rm.to_json().dump());
    write_bytes(inputs.out_dir / "manifest.json", rm.to_json().dump(2) + "\n");

    result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return result;
}

}  // namespace xsyn::pipeline
