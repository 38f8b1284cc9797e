// Copyright Contributors to the OrbitalSplat Project
// SPDX-License-Identifier: Apache-2.0
//
#include "orbitalsplat/config.hpp"

#include "orbitalsplat/error.hpp"

#include <yaml-cpp/yaml.h>

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace orbitalsplat {

void CorpusConfig::validate() const {
    if (n_validation < 0) {
        throw InvalidArgument("dataset.n_validation must be >= 0");
    }
    if (n_chunks < 1) {
        throw InvalidArgument("dataset.n_chunks must be >= 1");
    }
}

void MeshConfig::validate() const {
    if (resolution < 2) {
        throw InvalidArgument("mesh.resolution must be >= 2");
    }
    if (!std::isfinite(iso)) {
        throw InvalidArgument("mesh.iso must be finite");
    }
    if (atlas_size < 2) {
        throw InvalidArgument("mesh.atlas_size must be >= 2");
    }
    if (bake_image_size < 1) {
        throw InvalidArgument("mesh.bake_image_size must be >= 1");
    }
    if (!(bake_radius > 0.0)) {
        throw InvalidArgument("mesh.bake_radius must be positive");
    }
}

void EvaluateConfig::validate() const {
    if (!(psnr_max_value > 0.0)) {
        throw InvalidArgument("evaluate.psnr_max_value must be positive");
    }
}

void PipelineConfig::validate() const {
    if (jobs < 0) {
        throw InvalidArgument("jobs must be >= 0");
    }
    if (snapshot_every < 0) {
        throw InvalidArgument("snapshot_every must be >= 0");
    }
    render.validate();
    dataset.validate();
    preprocess.validate();
    reconstruct.validate();
    mesh.validate();
    evaluate.validate();
    if (!service.base_url.empty()) {
        service.validate();
    } else if (!(service.timeout_s > 0.0) || service.max_retries < 0) {
        throw InvalidArgument("service.timeout_s must be positive and service.max_retries >= 0");
    }
}

std::optional<ServiceEndpoint> PipelineConfig::endpoint() const {
    if (!service.base_url.empty()) {
        return service;
    }
    auto env = ServiceEndpoint::from_environment();
    if (!env) {
        return std::nullopt;
    }
    ServiceEndpoint ep = service;
    ep.base_url = env->base_url;
    return ep;
}

CameraPose reference_pose_at(const Vec3 &position) {
    const Vec3 dir = -position.normalized();
    const Vec3 up = std::abs(dir.z()) > 1.0 - 1e-9 ? Vec3::UnitY() : Vec3::UnitZ();
    return look_at(position, Vec3::Zero(), up);
}

namespace {

/// A mapping being read; remembers which keys were consumed so leftovers can be reported.
class Section {
  public:
    Section(YAML::Node node, std::string path) : node_(std::move(node)), path_(std::move(path)) {
        if (node_ && !node_.IsNull() && !node_.IsMap()) {
            fail(node_, path_.empty() ? "document" : path_, "expected a mapping");
        }
    }

    template <class T>
    void get(const char *key, T &out) {
        const YAML::Node v = take(key);
        if (!v) {
            return;
        }
        try {
            out = v.as<T>();
        } catch (const YAML::Exception &) {
            fail(v, full(key), "value has the wrong type");
        }
    }

    void get_vec3(const char *key, Vec3 &out) {
        const YAML::Node v = take(key);
        if (!v) {
            return;
        }
        if (!v.IsSequence() || v.size() != 3) {
            fail(v, full(key), "expected a list of 3 numbers");
        }
        try {
            out = Vec3(v[0].as<double>(), v[1].as<double>(), v[2].as<double>());
        } catch (const YAML::Exception &) {
            fail(v, full(key), "expected a list of 3 numbers");
        }
    }

    void get_optional_vec3(const char *key, std::optional<Vec3> &out) {
        const YAML::Node v = peek(key);
        if (v && v.IsNull()) {
            take(key);
            out.reset();
            return;
        }
        Vec3 tmp = out.value_or(Vec3::Zero());
        const bool present = static_cast<bool>(v);
        get_vec3(key, tmp);
        if (present) {
            out = tmp;
        }
    }

    void get_optional_string(const char *key, std::optional<std::string> &out) {
        const YAML::Node v = peek(key);
        if (v && v.IsNull()) {
            take(key);
            out.reset();
            return;
        }
        if (v) {
            std::string tmp;
            get(key, tmp);
            out = tmp;
        }
    }

    Section child(const char *key) { return Section(take(key), full(key)); }

    /// Throws on the first key that was never read.
    void finish() const {
        if (!node_ || !node_.IsMap()) {
            return;
        }
        for (const auto &kv : node_) {
            const std::string key = kv.first.as<std::string>();
            if (!used_.count(key)) {
                fail(kv.first, full(key.c_str()), "unknown key");
            }
        }
    }

  private:
    YAML::Node peek(const char *key) const {
        if (!node_ || !node_.IsMap()) {
            return YAML::Node(YAML::NodeType::Undefined);
        }
        for (const auto &kv : node_) {
            if (kv.first.as<std::string>() == key) {
                return kv.second;
            }
        }
        return YAML::Node(YAML::NodeType::Undefined);
    }

    YAML::Node take(const char *key) {
        used_.insert(key);
        return peek(key);
    }

    std::string full(const char *key) const { return path_.empty() ? key : path_ + "." + key; }

    [[noreturn]] static void fail(const YAML::Node &at, const std::string &key, const std::string &what) {
        const YAML::Mark m = at.Mark();
        throw ParseError(m.line >= 0 ? static_cast<std::size_t>(m.line) + 1 : 0, key,
                         what + (m.column >= 0 ? " (column " + std::to_string(m.column + 1) + ")" : ""));
    }

    YAML::Node node_;
    std::string path_;
    std::set<std::string> used_;
};

} // namespace

PipelineConfig parse_config(const std::string &yaml_text) {
    YAML::Node root;
    try {
        root = YAML::Load(yaml_text);
    } catch (const YAML::ParserException &e) {
        throw ParseError(static_cast<std::size_t>(e.mark.line) + 1, "document", e.msg);
    }
    PipelineConfig c;
    Section top(root, "");
    top.get("seed", c.seed);
    top.get("jobs", c.jobs);
    top.get("snapshot_every", c.snapshot_every);
    {
        Section s = top.child("render");
        s.get("radius", c.render.radius);
        s.get("fov_y_deg", c.render.intrinsics.fov_y_deg);
        s.get("width", c.render.intrinsics.width);
        s.get("height", c.render.intrinsics.height);
        s.get("near_plane", c.render.intrinsics.near_plane);
        s.get("far_plane", c.render.intrinsics.far_plane);
        s.get("output_size", c.render.output_size);
        std::string shading(to_string(c.render.settings.shading));
        s.get("shading", shading);
        c.render.settings.shading = shading_from_string(shading);
        s.get_optional_vec3("light_dir", c.render.settings.light_dir);
        s.get("ambient", c.render.settings.ambient);
        s.get("background_alpha", c.render.settings.background_alpha);
        s.get_vec3("background_rgb", c.render.settings.background_rgb);
        s.finish();
    }
    {
        Section s = top.child("dataset");
        s.get("n_validation", c.dataset.n_validation);
        s.get("n_chunks", c.dataset.n_chunks);
        s.finish();
    }
    {
        Section s = top.child("preprocess");
        s.get("matte_threshold", c.preprocess.matte_threshold);
        s.get("border_ratio", c.preprocess.border_ratio);
        s.get("target_size", c.preprocess.target_size);
        s.finish();
    }
    {
        ReconstructionConfig &r = c.reconstruct;
        Section s = top.child("reconstruct");
        s.get("iterations", r.iterations);
        s.get("initial_gaussians", r.initial_gaussians);
        s.get("init_radius", r.init_radius);
        s.get("elevation_min_deg", r.elevation_min_deg);
        s.get("elevation_max_deg", r.elevation_max_deg);
        s.get("fov_y_deg", r.fov_y_deg);
        s.get("lambda_rgb", r.lambda_rgb);
        s.get("lambda_mask", r.lambda_mask);
        Vec3 ref = r.reference_pose.position;
        s.get_vec3("reference_position", ref);
        r.reference_pose = reference_pose_at(ref);
        {
            Section l = s.child("lr");
            l.get("position", r.lr.position);
            l.get("position_final_ratio", r.lr.position_final_ratio);
            l.get("scale", r.lr.scale);
            l.get("rotation", r.lr.rotation);
            l.get("opacity", r.lr.opacity);
            l.get("color", r.lr.color);
            l.finish();
        }
        {
            Section d = s.child("densify");
            d.get("interval", r.densify.interval);
            d.get("grad_threshold", r.densify.grad_threshold);
            d.get("split_scale_threshold", r.densify.split_scale_threshold);
            d.get("prune_opacity", r.densify.prune_opacity);
            d.get("max_gaussians", r.densify.max_gaussians);
            d.finish();
        }
        s.finish();
    }
    {
        Section s = top.child("mesh");
        s.get("resolution", c.mesh.resolution);
        s.get("iso", c.mesh.iso);
        s.get("texture", c.mesh.texture);
        s.get("atlas_size", c.mesh.atlas_size);
        s.get("bake_image_size", c.mesh.bake_image_size);
        s.get("bake_radius", c.mesh.bake_radius);
        s.finish();
    }
    {
        Section s = top.child("evaluate");
        s.get("psnr_max_value", c.evaluate.psnr_max_value);
        s.finish();
    }
    {
        Section s = top.child("service");
        s.get("base_url", c.service.base_url);
        s.get("timeout_s", c.service.timeout_s);
        s.get("max_retries", c.service.max_retries);
        s.get_optional_string("auth_token", c.service.auth_token);
        s.finish();
    }
    top.finish();
    c.reconstruct.seed = c.seed;
    c.validate();
    return c;
}

PipelineConfig load_config(const std::filesystem::path &path) {
    std::ifstream f(path);
    if (!f) {
        throw IoError("cannot read config '" + path.string() + "'");
    }
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_config(ss.str());
}

namespace {

void emit_vec3(YAML::Emitter &out, const char *key, const Vec3 &v) {
    out << YAML::Key << key << YAML::Value << YAML::Flow << YAML::BeginSeq << v.x() << v.y() << v.z()
        << YAML::EndSeq;
}

} // namespace

std::string dump_config(const PipelineConfig &c) {
    YAML::Emitter out;
    out.SetDoublePrecision(17);
    out << YAML::BeginMap;
    out << YAML::Key << "seed" << YAML::Value << c.seed;
    out << YAML::Key << "jobs" << YAML::Value << c.jobs;
    out << YAML::Key << "snapshot_every" << YAML::Value << c.snapshot_every;

    out << YAML::Key << "render" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "radius" << YAML::Value << c.render.radius;
    out << YAML::Key << "fov_y_deg" << YAML::Value << c.render.intrinsics.fov_y_deg;
    out << YAML::Key << "width" << YAML::Value << c.render.intrinsics.width;
    out << YAML::Key << "height" << YAML::Value << c.render.intrinsics.height;
    out << YAML::Key << "near_plane" << YAML::Value << c.render.intrinsics.near_plane;
    out << YAML::Key << "far_plane" << YAML::Value << c.render.intrinsics.far_plane;
    out << YAML::Key << "output_size" << YAML::Value << c.render.output_size;
    out << YAML::Key << "shading" << YAML::Value << std::string(to_string(c.render.settings.shading));
    if (c.render.settings.light_dir) {
        emit_vec3(out, "light_dir", *c.render.settings.light_dir);
    } else {
        out << YAML::Key << "light_dir" << YAML::Value << YAML::Null;
    }
    out << YAML::Key << "ambient" << YAML::Value << c.render.settings.ambient;
    out << YAML::Key << "background_alpha" << YAML::Value << c.render.settings.background_alpha;
    emit_vec3(out, "background_rgb", c.render.settings.background_rgb);
    out << YAML::EndMap;

    out << YAML::Key << "dataset" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "n_validation" << YAML::Value << c.dataset.n_validation;
    out << YAML::Key << "n_chunks" << YAML::Value << c.dataset.n_chunks;
    out << YAML::EndMap;

    out << YAML::Key << "preprocess" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "matte_threshold" << YAML::Value << c.preprocess.matte_threshold;
    out << YAML::Key << "border_ratio" << YAML::Value << c.preprocess.border_ratio;
    out << YAML::Key << "target_size" << YAML::Value << c.preprocess.target_size;
    out << YAML::EndMap;

    const ReconstructionConfig &r = c.reconstruct;
    out << YAML::Key << "reconstruct" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "iterations" << YAML::Value << r.iterations;
    out << YAML::Key << "initial_gaussians" << YAML::Value << r.initial_gaussians;
    out << YAML::Key << "init_radius" << YAML::Value << r.init_radius;
    out << YAML::Key << "elevation_min_deg" << YAML::Value << r.elevation_min_deg;
    out << YAML::Key << "elevation_max_deg" << YAML::Value << r.elevation_max_deg;
    out << YAML::Key << "fov_y_deg" << YAML::Value << r.fov_y_deg;
    out << YAML::Key << "lambda_rgb" << YAML::Value << r.lambda_rgb;
    out << YAML::Key << "lambda_mask" << YAML::Value << r.lambda_mask;
    emit_vec3(out, "reference_position", r.reference_pose.position);
    out << YAML::Key << "lr" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "position" << YAML::Value << r.lr.position;
    out << YAML::Key << "position_final_ratio" << YAML::Value << r.lr.position_final_ratio;
    out << YAML::Key << "scale" << YAML::Value << r.lr.scale;
    out << YAML::Key << "rotation" << YAML::Value << r.lr.rotation;
    out << YAML::Key << "opacity" << YAML::Value << r.lr.opacity;
    out << YAML::Key << "color" << YAML::Value << r.lr.color;
    out << YAML::EndMap;
    out << YAML::Key << "densify" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "interval" << YAML::Value << r.densify.interval;
    out << YAML::Key << "grad_threshold" << YAML::Value << r.densify.grad_threshold;
    out << YAML::Key << "split_scale_threshold" << YAML::Value << r.densify.split_scale_threshold;
    out << YAML::Key << "prune_opacity" << YAML::Value << r.densify.prune_opacity;
    out << YAML::Key << "max_gaussians" << YAML::Value << r.densify.max_gaussians;
    out << YAML::EndMap;
    out << YAML::EndMap;

    out << YAML::Key << "mesh" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "resolution" << YAML::Value << c.mesh.resolution;
    out << YAML::Key << "iso" << YAML::Value << c.mesh.iso;
    out << YAML::Key << "texture" << YAML::Value << c.mesh.texture;
    out << YAML::Key << "atlas_size" << YAML::Value << c.mesh.atlas_size;
    out << YAML::Key << "bake_image_size" << YAML::Value << c.mesh.bake_image_size;
    out << YAML::Key << "bake_radius" << YAML::Value << c.mesh.bake_radius;
    out << YAML::EndMap;

    out << YAML::Key << "evaluate" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "psnr_max_value" << YAML::Value << c.evaluate.psnr_max_value;
    out << YAML::EndMap;

    out << YAML::Key << "service" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "base_url" << YAML::Value << c.service.base_url;
    out << YAML::Key << "timeout_s" << YAML::Value << c.service.timeout_s;
    out << YAML::Key << "max_retries" << YAML::Value << c.service.max_retries;
    // Tokens are never written out.
    out << YAML::Key << "auth_token" << YAML::Value << YAML::Null;
    out << YAML::EndMap;
    out << YAML::EndMap;
    return std::string(out.c_str()) + "\n";
}

} // namespace orbitalsplat
