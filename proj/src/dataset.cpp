// Copyright Contributors to the OrbitalSplat Project
// SPDX-License-Identifier: Apache-2.0
//
#include "orbitalsplat/dataset.hpp"

#include "orbitalsplat/error.hpp"
#include "orbitalsplat/imageops.hpp"
#include "orbitalsplat/parallel.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <random>

namespace orbitalsplat {

using nlohmann::json;

std::string_view to_string(Split split) {
    switch (split) {
    case Split::Train:
        return "train";
    case Split::Validation:
        return "validation";
    case Split::Test:
        return "test";
    }
    return "train";
}

Split split_from_string(std::string_view name) {
    if (name == "train") {
        return Split::Train;
    }
    if (name == "validation") {
        return Split::Validation;
    }
    if (name == "test") {
        return Split::Test;
    }
    throw InvalidArgument("unknown split '" + std::string(name) + "'");
}

CameraIntrinsics ViewRecord::intrinsics() const {
    CameraIntrinsics intr;
    intr.fov_y_deg = fov_y_deg;
    intr.width = width;
    intr.height = height;
    return intr;
}

void DatasetOptions::validate() const {
    if (!(radius > 0.0)) {
        throw InvalidArgument("dataset radius must be positive");
    }
    intrinsics.validate();
    settings.validate();
    if (output_size < 1) {
        throw InvalidArgument("dataset output size must be positive");
    }
}

std::string view_file_name(OrbitPlane plane, int index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s_%02d.png", std::string(to_string(plane)).c_str(), index);
    return buf;
}

DatasetManifest render_dataset(const std::filesystem::path &model, const std::filesystem::path &out_dir,
                               const DatasetOptions &opts) {
    opts.validate();
    ObjParseResult parsed = load_obj(model);
    NormalizedMesh normalized = normalize_to_unit_sphere(parsed.mesh);
    Mesh mesh = std::move(normalized.mesh);
    if (opts.settings.shading == Shading::Lambertian && mesh.normals.empty()) {
        mesh = compute_vertex_normals(mesh);
    }

    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) {
        throw IoError("cannot create '" + out_dir.string() + "': " + ec.message());
    }

    const auto views = generate_orbit_views(opts.radius);
    DatasetManifest manifest;
    manifest.model_id = model.stem().string();
    manifest.views.resize(views.size());
    parallel_for(views.size(), [&](std::size_t i) {
        const OrbitView &view = views[i];
        Framebuffer fb = render_mesh(mesh, parsed.materials, opts.intrinsics, view.pose, opts.settings);
        ImageRGBA image = resize(fb.color, opts.output_size, opts.output_size);
        ViewRecord rec;
        rec.image_path = view_file_name(view.plane, view.index);
        rec.plane = view.plane;
        rec.index = view.index;
        rec.angle_deg = view.angle_deg;
        rec.pose = view.pose;
        rec.fov_y_deg = opts.intrinsics.fov_y_deg;
        rec.width = opts.output_size;
        rec.height = opts.output_size;
        write_png(image, out_dir / rec.image_path);
        manifest.views[i] = std::move(rec);
    });
    write_manifest(manifest, out_dir / "manifest.json");
    return manifest;
}

std::map<std::string, Split> assign_splits(const std::vector<std::string> &model_ids, int n_validation,
                                           std::uint64_t seed) {
    if (n_validation < 0 || static_cast<std::size_t>(n_validation) >= model_ids.size()) {
        throw InvalidArgument("assign_splits: n_validation must be in [0, model count)");
    }
    std::vector<std::string> order = model_ids;
    std::sort(order.begin(), order.end());
    std::mt19937_64 rng(seed);
    // Fisher-Yates with a plain modulo draw so the permutation only depends on mt19937_64.
    for (std::size_t i = order.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng() % i);
        std::swap(order[i - 1], order[j]);
    }
    std::map<std::string, Split> out;
    for (std::size_t i = 0; i < order.size(); ++i) {
        out[order[i]] = i < static_cast<std::size_t>(n_validation) ? Split::Validation : Split::Train;
    }
    return out;
}

std::vector<DatasetManifest> chunk_manifests(std::vector<DatasetManifest> manifests, int n_chunks) {
    if (n_chunks < 1) {
        throw InvalidArgument("chunk_manifests: n_chunks must be at least 1");
    }
    int k = 0;
    for (auto &m : manifests) {
        if (m.split == Split::Train) {
            m.chunk_index = k % n_chunks;
            ++k;
        } else {
            m.chunk_index = 0;
        }
    }
    return manifests;
}

namespace {

json pose_to_json(const ViewRecord &v) {
    const auto q = v.pose.rotation.wxyz();
    return json{{"image_path", v.image_path},
                {"plane", std::string(to_string(v.plane))},
                {"index", v.index},
                {"angle_deg", v.angle_deg},
                {"position", {v.pose.position.x(), v.pose.position.y(), v.pose.position.z()}},
                {"quaternion", {q[0], q[1], q[2], q[3]}},
                {"fov_y_deg", v.fov_y_deg},
                {"width", v.width},
                {"height", v.height}};
}

ViewRecord pose_from_json(const json &j) {
    ViewRecord v;
    v.image_path = j.at("image_path").get<std::string>();
    v.plane = orbit_plane_from_string(j.at("plane").get<std::string>());
    v.index = j.at("index").get<int>();
    v.angle_deg = j.at("angle_deg").get<double>();
    const auto p = j.at("position").get<std::vector<double>>();
    const auto q = j.at("quaternion").get<std::vector<double>>();
    if (p.size() != 3 || q.size() != 4) {
        throw InvalidArgument("manifest pose record has wrong arity");
    }
    v.pose.position = Vec3(p[0], p[1], p[2]);
    v.pose.rotation = UnitQuaternion(q[0], q[1], q[2], q[3]);
    v.fov_y_deg = j.at("fov_y_deg").get<double>();
    v.width = j.at("width").get<int>();
    v.height = j.at("height").get<int>();
    return v;
}

} // namespace

void write_manifest(const DatasetManifest &manifest, const std::filesystem::path &path) {
    json views = json::array();
    for (const auto &v : manifest.views) {
        views.push_back(pose_to_json(v));
    }
    const json j{{"model_id", manifest.model_id},
                 {"split", std::string(to_string(manifest.split))},
                 {"chunk_index", manifest.chunk_index},
                 {"views", views}};
    std::ofstream f(path);
    if (!f) {
        throw IoError("cannot write manifest '" + path.string() + "'");
    }
    f << j.dump(2) << '\n';
}

DatasetManifest read_manifest(const std::filesystem::path &path) {
    std::ifstream f(path);
    if (!f) {
        throw IoError("cannot read manifest '" + path.string() + "'");
    }
    try {
        const json j = json::parse(f);
        DatasetManifest m;
        m.model_id = j.at("model_id").get<std::string>();
        m.split = split_from_string(j.at("split").get<std::string>());
        m.chunk_index = j.at("chunk_index").get<int>();
        for (const auto &v : j.at("views")) {
            m.views.push_back(pose_from_json(v));
        }
        return m;
    } catch (const json::exception &e) {
        throw IoError("malformed manifest '" + path.string() + "': " + e.what());
    }
}

void write_corpus_index(const std::vector<CorpusEntry> &entries, int n_chunks,
                        const std::filesystem::path &path) {
    json models = json::array();
    for (const auto &e : entries) {
        models.push_back({{"model_id", e.model_id},
                          {"split", std::string(to_string(e.split))},
                          {"chunk_index", e.chunk_index},
                          {"manifest", e.manifest_path},
                          {"views", e.view_count}});
    }
    const json j{{"n_chunks", n_chunks},
                 {"models", models},
                 {"finetune_provenance",
                  {{"learning_rate", 5e-5},
                   {"batch_size", 1},
                   {"data_chunks", 48},
                   {"note", "recorded for reference; no fine-tuning is performed by this tool"}}}};
    std::ofstream f(path);
    if (!f) {
        throw IoError("cannot write corpus index '" + path.string() + "'");
    }
    f << j.dump(2) << '\n';
}

} // namespace orbitalsplat
