// Copyright Contributors to the OrbitalSplat Project
// SPDX-License-Identifier: Apache-2.0
//
#include "orbitalsplat/cli.hpp"

#include "orbitalsplat/config.hpp"
#include "orbitalsplat/dataset.hpp"
#include "orbitalsplat/error.hpp"
#include "orbitalsplat/gaussians.hpp"
#include "orbitalsplat/guidance_client.hpp"
#include "orbitalsplat/imageops.hpp"
#include "orbitalsplat/meshextract.hpp"
#include "orbitalsplat/metrics.hpp"
#include "orbitalsplat/parallel.hpp"
#include "orbitalsplat/raster.hpp"
#include "orbitalsplat/reconstruct.hpp"

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>

namespace orbitalsplat {

namespace fs = std::filesystem;

namespace {

void use_stderr_logger(const std::string &level) {
    static const auto logger = [] {
        auto l = std::make_shared<spdlog::logger>("orbitalsplat", std::make_shared<spdlog::sinks::stderr_color_sink_mt>());
        spdlog::set_default_logger(l);
        return l;
    }();
    logger->set_level(spdlog::level::from_str(level));
}

void write_text(const fs::path &path, const std::string &text) {
    fs::create_directories(path.parent_path());
    std::ofstream f(path);
    if (!f) {
        throw IoError("cannot write '" + path.string() + "'");
    }
    f << text;
}

/// Straight-alpha image of a splat render made over black.
ImageRGBA unpremultiply(const ImageRGBA &over_black) {
    ImageRGBA out = over_black;
    auto d = out.data();
    for (std::size_t p = 0; p < out.pixel_count(); ++p) {
        const double a = d[4 * p + 3];
        for (std::size_t c = 0; c < 3; ++c) {
            d[4 * p + c] = a > 1e-6 ? std::clamp(d[4 * p + c] / a, 0.0, 1.0) : 0.0;
        }
    }
    return out;
}

struct GlobalOptions {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<int> jobs;
    std::string log_level = "info";
};

PipelineConfig resolve(const GlobalOptions &g) {
    PipelineConfig cfg;
    if (!g.config_path.empty()) {
        try {
            cfg = load_config(g.config_path);
        } catch (const ParseError &e) {
            throw InvalidArgument(g.config_path + ": " + e.what());
        }
    }
    if (g.seed) {
        cfg.seed = *g.seed;
    }
    if (g.jobs) {
        cfg.jobs = *g.jobs;
    }
    cfg.reconstruct.seed = cfg.seed;
    return cfg;
}

void finalize(PipelineConfig &cfg, const fs::path &out_dir) {
    cfg.validate();
    set_max_jobs(cfg.jobs);
    write_text(out_dir / "resolved_config.yaml", dump_config(cfg));
}

// ---- dataset ----

struct DatasetArgs {
    std::string models_dir, out_dir;
    std::optional<int> n_validation, n_chunks, output_size;
    std::optional<std::string> shading;
};

int cmd_dataset(const GlobalOptions &g, const DatasetArgs &a) {
    PipelineConfig cfg = resolve(g);
    if (a.n_validation) {
        cfg.dataset.n_validation = *a.n_validation;
    }
    if (a.n_chunks) {
        cfg.dataset.n_chunks = *a.n_chunks;
    }
    if (a.output_size) {
        cfg.render.output_size = *a.output_size;
    }
    if (a.shading) {
        cfg.render.settings.shading = shading_from_string(*a.shading);
    }
    if (!fs::is_directory(a.models_dir)) {
        throw InvalidArgument("models directory '" + a.models_dir + "' does not exist");
    }
    std::vector<fs::path> models;
    for (const auto &e : fs::directory_iterator(a.models_dir)) {
        if (e.is_regular_file() && e.path().extension() == ".obj") {
            models.push_back(e.path());
        }
    }
    std::sort(models.begin(), models.end());
    if (models.empty()) {
        throw InvalidArgument("no .obj files in '" + a.models_dir + "'");
    }
    finalize(cfg, a.out_dir);

    std::vector<DatasetManifest> manifests;
    std::size_t failed = 0;
    for (const fs::path &model : models) {
        const std::string id = model.stem().string();
        try {
            DatasetManifest m = render_dataset(model, fs::path(a.out_dir) / id, cfg.render);
            m.model_id = id;
            std::printf("%s: %zu views\n", id.c_str(), m.views.size());
            manifests.push_back(std::move(m));
        } catch (const std::exception &e) {
            ++failed;
            std::printf("%s: FAILED: %s\n", id.c_str(), e.what());
            spdlog::error("{}: {}", id, e.what());
        }
    }
    std::fflush(stdout);

    if (!manifests.empty()) {
        std::vector<std::string> ids;
        for (const auto &m : manifests) {
            ids.push_back(m.model_id);
        }
        const int n_validation = std::min<int>(cfg.dataset.n_validation, static_cast<int>(ids.size()) - 1);
        if (n_validation < cfg.dataset.n_validation) {
            spdlog::warn("only {} models rendered; using {} validation models", ids.size(), n_validation);
        }
        const auto splits = assign_splits(ids, n_validation, cfg.seed);
        for (auto &m : manifests) {
            m.split = splits.at(m.model_id);
        }
        manifests = chunk_manifests(std::move(manifests), cfg.dataset.n_chunks);
        std::vector<CorpusEntry> entries;
        for (const auto &m : manifests) {
            const fs::path manifest_path = fs::path(a.out_dir) / m.model_id / "manifest.json";
            write_manifest(m, manifest_path);
            entries.push_back({m.model_id, m.split, m.chunk_index, m.model_id + "/manifest.json", m.views.size()});
        }
        write_corpus_index(entries, cfg.dataset.n_chunks, fs::path(a.out_dir) / "corpus.json");
    }
    std::printf("%zu models rendered, %zu failed\n", manifests.size(), failed);
    return failed == 0 ? kExitOk : kExitFailure;
}

// ---- reconstruct ----

struct ReconstructArgs {
    std::string image, out_dir;
    std::vector<std::string> guidance;
    std::optional<int> iterations, initial_gaussians;
};

int cmd_reconstruct(const GlobalOptions &g, const ReconstructArgs &a) {
    PipelineConfig cfg = resolve(g);
    if (a.iterations) {
        cfg.reconstruct.iterations = *a.iterations;
    }
    if (a.initial_gaussians) {
        cfg.reconstruct.initial_gaussians = *a.initial_gaussians;
    }
    const std::string mode = a.guidance.at(0);
    if (mode != "ground-truth" && mode != "remote") {
        throw InvalidArgument("--guidance must be 'ground-truth <dataset>' or 'remote [url]'");
    }
    const fs::path out(a.out_dir);
    cfg.reconstruct.dump_dir = out;

    const ImageRGBA input = read_png(a.image);
    ImageRGBA reference;
    std::unique_ptr<GuidanceProvider> provider;
    if (mode == "ground-truth") {
        if (a.guidance.size() != 2) {
            throw InvalidArgument("--guidance ground-truth needs a dataset directory");
        }
        const fs::path ds(a.guidance[1]);
        const DatasetManifest manifest = read_manifest(ds / "manifest.json");
        if (manifest.views.empty()) {
            throw InvalidArgument("dataset manifest lists no views");
        }
        // Dataset targets share the dataset framing, so the input is matted and resized to the
        // dataset image size but not recentered.
        const ImageRGBA first = read_png(ds / manifest.views.front().image_path);
        if (first.width() != cfg.preprocess.target_size) {
            spdlog::info("working at the dataset image size {} instead of preprocess.target_size {}", first.width(),
                         cfg.preprocess.target_size);
        }
        reference = alpha_matte(input, cfg.preprocess.matte_threshold);
        if (!reference.same_size(first)) {
            reference = resize(reference, first.width(), first.height());
        }
        const std::string name = fs::path(a.image).filename().string();
        for (const ViewRecord &v : manifest.views) {
            if (v.image_path == name) {
                cfg.reconstruct.reference_pose = v.pose;
                spdlog::info("reference camera taken from dataset view {}", name);
            }
        }
        provider = std::make_unique<GroundTruthGuidance>(manifest, ds, cfg.reconstruct.reference_pose);
    } else {
        if (a.guidance.size() == 2) {
            cfg.service.base_url = a.guidance[1];
        }
        const auto ep = cfg.endpoint();
        if (!ep) {
            throw InvalidArgument(std::string("no service URL: pass --guidance remote <url>, set service.base_url or ") +
                                  kEndpointEnvVar);
        }
        reference = standardize(input, cfg.preprocess);
        auto client = std::make_shared<GuidanceClient>(*ep);
        const HealthStatus h = client->health();
        spdlog::info("guidance service {}: status {}, model {}", ep->base_url, h.status, h.model);
        provider = std::make_unique<RemoteGuidance>(client);
    }
    finalize(cfg, out);
    write_png(reference, out / "input.png");

    CameraIntrinsics intr;
    intr.fov_y_deg = cfg.reconstruct.fov_y_deg;
    intr.width = reference.width();
    intr.height = reference.height();
    const auto snapshot = [&](int it, const GaussianCloud &cloud) {
        if (cfg.snapshot_every > 0 && (it + 1) % cfg.snapshot_every == 0) {
            char name[32];
            std::snprintf(name, sizeof(name), "iter_%05d.png", it + 1);
            const RenderOutput r = render(cloud, intr, cfg.reconstruct.reference_pose, Vec3::Ones());
            write_png(r.color, out / "snapshots" / name);
        }
        if ((it + 1) % 100 == 0) {
            spdlog::info("iteration {} / {}: {} Gaussians", it + 1, cfg.reconstruct.iterations, cloud.size());
        }
    };
    fs::create_directories(out / "snapshots");
    const ReconstructionResult result = optimize(reference, *provider, cfg.reconstruct, snapshot);

    save_cloud(result.cloud, out / "cloud.osgc");
    write_trace_csv(result.trace, out / "trace.csv");
    fs::create_directories(out / "renders");
    for (int az : {0, 90, 180, 270}) {
        RelativePose d;
        d.delta_azimuth_deg = az;
        const CameraPose pose = pose_from_relative(cfg.reconstruct.reference_pose, d);
        char name[32];
        std::snprintf(name, sizeof(name), "azimuth_%03d.png", az);
        write_png(render(result.cloud, intr, pose, Vec3::Ones()).color, out / "renders" / name);
    }
    const TraceRow &last = result.trace.back();
    std::printf("%d iterations, %zu Gaussians, loss_ref %.6g, loss_novel %.6g\n", last.iteration + 1,
                result.cloud.size(), last.loss_ref, last.loss_novel);
    return kExitOk;
}

// ---- mesh ----

struct MeshArgs {
    std::string cloud, out_dir;
    std::optional<int> resolution, atlas_size;
    std::optional<double> iso;
    bool no_texture = false;
};

int cmd_mesh(const GlobalOptions &g, const MeshArgs &a) {
    PipelineConfig cfg = resolve(g);
    if (a.resolution) {
        cfg.mesh.resolution = *a.resolution;
    }
    if (a.atlas_size) {
        cfg.mesh.atlas_size = *a.atlas_size;
    }
    if (a.iso) {
        cfg.mesh.iso = *a.iso;
    }
    if (a.no_texture) {
        cfg.mesh.texture = false;
    }
    const fs::path out(a.out_dir);
    finalize(cfg, out);
    const GaussianCloud cloud = load_cloud(a.cloud);
    const int r = cfg.mesh.resolution;
    const DensityGrid grid = sample_grid(cloud, {r, r, r}, default_bounds(cloud));
    const Mesh mesh = marching_cubes(grid, cfg.mesh.iso);
    if (mesh.empty()) {
        throw Error("density never crosses iso " + std::to_string(cfg.mesh.iso) + "; no surface to extract");
    }
    if (cfg.mesh.texture) {
        CameraIntrinsics intr = cfg.render.intrinsics;
        intr.width = intr.height = cfg.mesh.bake_image_size;
        std::vector<BakeView> views;
        for (const CameraPose &p : generate_paper_poses(cfg.mesh.bake_radius)) {
            views.push_back({intr, p});
        }
        save_textured_mesh(bake_texture(cloud, mesh, views, cfg.mesh.atlas_size), out, "mesh");
    } else {
        save_obj(out, "mesh", mesh, {});
    }
    std::printf("%zu vertices, %zu triangles\n", mesh.vertices.size(), mesh.triangles.size());
    return kExitOk;
}

// ---- render-views ----

struct RenderViewsArgs {
    std::string input, out_dir;
    std::string poses = "paper";
    std::optional<int> size;
    std::optional<double> radius;
};

int cmd_render_views(const GlobalOptions &g, const RenderViewsArgs &a) {
    PipelineConfig cfg = resolve(g);
    if (a.size) {
        cfg.render.output_size = *a.size;
    }
    if (a.radius) {
        cfg.render.radius = *a.radius;
    }
    const fs::path out(a.out_dir);
    finalize(cfg, out);

    std::vector<std::pair<std::string, CameraPose>> views;
    if (a.poses == "paper") {
        const auto poses = generate_paper_poses(cfg.render.radius);
        const OrbitPlane planes[] = {OrbitPlane::XY, OrbitPlane::YZ, OrbitPlane::XZ};
        for (std::size_t i = 0; i < poses.size(); ++i) {
            views.emplace_back(view_file_name(planes[i / 16], static_cast<int>(i % 16)), poses[i]);
        }
    } else {
        for (const ViewRecord &v : read_manifest(a.poses).views) {
            views.emplace_back(v.image_path, v.pose);
        }
    }
    CameraIntrinsics intr = cfg.render.intrinsics;
    intr.width = intr.height = cfg.render.output_size;

    const fs::path in(a.input);
    if (in.extension() == ".obj") {
        const ObjParseResult obj = load_obj(in);
        parallel_for(views.size(), [&](std::size_t i) {
            const Framebuffer fb = render_mesh(obj.mesh, obj.materials, intr, views[i].second, cfg.render.settings);
            write_png(fb.color, out / views[i].first);
        });
    } else {
        const GaussianCloud cloud = load_cloud(in);
        for (const auto &[name, pose] : views) {
            write_png(unpremultiply(render(cloud, intr, pose, Vec3::Zero()).color), out / name);
        }
    }
    std::printf("%zu views written to %s\n", views.size(), out.string().c_str());
    return kExitOk;
}

// ---- evaluate ----

struct EvaluateArgs {
    std::string pred_dir, gt_dir;
    std::string out_dir = "evaluation";
    std::optional<std::string> endpoint;
};

int cmd_evaluate(const GlobalOptions &g, const EvaluateArgs &a) {
    PipelineConfig cfg = resolve(g);
    if (a.endpoint) {
        cfg.service.base_url = *a.endpoint;
    }
    const fs::path out(a.out_dir);
    finalize(cfg, out);
    std::shared_ptr<GuidanceClient> client;
    if (const auto ep = cfg.endpoint()) {
        client = std::make_shared<GuidanceClient>(*ep);
    }
    const MetricReport report =
        evaluate_pairs(a.pred_dir, a.gt_dir, client.get(), sha256_hex(dump_config(cfg)), cfg.evaluate.psnr_max_value);
    write_report(report, out);
    std::ifstream summary(out / "summary.txt");
    std::cout << summary.rdbuf();
    return report.errors.empty() ? kExitOk : kExitFailure;
}

} // namespace

int run_cli(const std::vector<std::string> &args) {
    CLI::App app{"Single-image 3D reconstruction with Gaussian splatting.", "orbitalsplat"};
    app.require_subcommand(1);
    GlobalOptions g;
    app.add_option("--config", g.config_path, "YAML configuration file")->check(CLI::ExistingFile);
    app.add_option("--seed", g.seed, "Random seed");
    app.add_option("--jobs", g.jobs, "Worker threads (0: all)")->check(CLI::NonNegativeNumber);
    app.add_option("--log-level", g.log_level, "trace, debug, info, warn, error or off")
        ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}));

    DatasetArgs da;
    CLI::App *dataset = app.add_subcommand("dataset", "Render the 48-view dataset of every .obj in a directory");
    dataset->fallthrough();
    dataset->add_option("models_dir", da.models_dir)->required();
    dataset->add_option("out_dir", da.out_dir)->required();
    dataset->add_option("--n-validation", da.n_validation, "Models assigned to the validation split");
    dataset->add_option("--n-chunks", da.n_chunks, "Training chunks");
    dataset->add_option("--output-size", da.output_size, "Stored image size");
    dataset->add_option("--shading", da.shading)->check(CLI::IsMember({"flat", "lambertian", "textured"}));

    ReconstructArgs ra;
    CLI::App *reconstruct = app.add_subcommand("reconstruct", "Optimize a Gaussian cloud from one image");
    reconstruct->fallthrough();
    reconstruct->add_option("image", ra.image)->required()->check(CLI::ExistingFile);
    reconstruct->add_option("out_dir", ra.out_dir)->required();
    reconstruct->add_option("--guidance", ra.guidance, "'ground-truth <dataset dir>' or 'remote [url]'")
        ->required()
        ->expected(1, 2);
    reconstruct->add_option("--iterations", ra.iterations);
    reconstruct->add_option("--initial-gaussians", ra.initial_gaussians);

    MeshArgs ma;
    CLI::App *mesh = app.add_subcommand("mesh", "Extract a textured mesh from a Gaussian cloud");
    mesh->fallthrough();
    mesh->add_option("cloud", ma.cloud)->required()->check(CLI::ExistingFile);
    mesh->add_option("out_dir", ma.out_dir)->required();
    mesh->add_option("--resolution", ma.resolution, "Lattice samples per axis");
    mesh->add_option("--iso", ma.iso, "Density level");
    mesh->add_option("--atlas-size", ma.atlas_size);
    mesh->add_flag("--no-texture", ma.no_texture, "Skip texture baking");

    RenderViewsArgs va;
    CLI::App *render_views = app.add_subcommand("render-views", "Render a cloud (.osgc, .txt) or mesh (.obj)");
    render_views->fallthrough();
    render_views->add_option("input", va.input)->required()->check(CLI::ExistingFile);
    render_views->add_option("out_dir", va.out_dir)->required();
    render_views->add_option("--poses", va.poses, "'paper' for the 48 orbit views, or a manifest.json");
    render_views->add_option("--size", va.size, "Output image size");
    render_views->add_option("--radius", va.radius, "Orbit radius for 'paper' poses");

    EvaluateArgs ea;
    CLI::App *evaluate = app.add_subcommand("evaluate", "Compare predicted images to ground truth");
    evaluate->fallthrough();
    evaluate->add_option("pred_dir", ea.pred_dir)->required();
    evaluate->add_option("gt_dir", ea.gt_dir)->required();
    evaluate->add_option("--out", ea.out_dir, "Report directory");
    evaluate->add_option("--endpoint", ea.endpoint, "Metrics service URL (LPIPS, CLIP)");

    std::vector<const char *> argv;
    for (const auto &s : args) {
        argv.push_back(s.c_str());
    }
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError &e) {
        return app.exit(e) == 0 ? kExitOk : kExitUsage;
    }
    use_stderr_logger(g.log_level);

    try {
        if (dataset->parsed()) {
            return cmd_dataset(g, da);
        }
        if (reconstruct->parsed()) {
            return cmd_reconstruct(g, ra);
        }
        if (mesh->parsed()) {
            return cmd_mesh(g, ma);
        }
        if (render_views->parsed()) {
            return cmd_render_views(g, va);
        }
        return cmd_evaluate(g, ea);
    } catch (const TransportError &e) {
        spdlog::error("guidance service unreachable: {}", e.what());
        return kExitTransport;
    } catch (const InvalidArgument &e) {
        spdlog::error("{}", e.what());
        return kExitUsage;
    } catch (const std::exception &e) {
        spdlog::error("{}", e.what());
        return kExitFailure;
    }
}

} // namespace orbitalsplat
