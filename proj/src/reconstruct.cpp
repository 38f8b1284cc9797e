// Copyright Contributors to the OrbitalSplat Project
// SPDX-License-Identifier: Apache-2.0
//
#include "orbitalsplat/reconstruct.hpp"

#include "orbitalsplat/error.hpp"
#include "orbitalsplat/imageops.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>

namespace orbitalsplat {

double uniform01(std::mt19937_64 &rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

double standard_normal(std::mt19937_64 &rng) {
    // Box-Muller; 1 - u keeps the log argument in (0, 1].
    const double u1 = 1.0 - uniform01(rng);
    const double u2 = uniform01(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

void GuidanceRequest::validate() const {
    if (rendered.empty() || !rendered.same_size(reference)) {
        throw InvalidArgument("guidance request images must be non-empty and the same size");
    }
    if (!(step >= 0 && step < total_steps)) {
        throw InvalidArgument("guidance request step must lie in [0, total_steps)");
    }
}

// ---- ground-truth guidance ----

GroundTruthGuidance::GroundTruthGuidance(const DatasetManifest &manifest, const std::filesystem::path &dataset_dir,
                                         const CameraPose &reference_pose, std::vector<std::size_t> excluded)
    : manifest_(manifest), dir_(dataset_dir), reference_pose_(reference_pose),
      excluded_(manifest.views.size(), false) {
    for (std::size_t i : excluded) {
        if (i >= excluded_.size()) {
            throw InvalidArgument("ground-truth guidance: excluded view index out of range");
        }
        excluded_[i] = true;
    }
    if (std::find(excluded_.begin(), excluded_.end(), false) == excluded_.end()) {
        throw EmptyInput("ground-truth guidance: dataset has no usable views");
    }
}

std::size_t GroundTruthGuidance::nearest_view(const CameraPose &reference, const RelativePose &delta) const {
    const Vec3 dir = pose_from_relative(reference, delta).position.normalized();
    std::size_t best = manifest_.views.size();
    double best_angle = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < manifest_.views.size(); ++i) {
        if (excluded_[i]) {
            continue;
        }
        const Vec3 p = manifest_.views[i].pose.position.normalized();
        const double angle = std::atan2(dir.cross(p).norm(), dir.dot(p));
        if (angle < best_angle - 1e-9) {
            best_angle = angle;
            best = i;
        }
    }
    return best;
}

std::optional<CameraPose> GroundTruthGuidance::lattice_pose(const CameraPose &reference, const RelativePose &delta) {
    return manifest_.views[nearest_view(reference, delta)].pose;
}

GuidanceResponse GroundTruthGuidance::provide_target(const GuidanceRequest &request) {
    request.validate();
    ++calls_;
    const std::size_t idx = nearest_view(reference_pose_, request.relative_pose);
    auto it = images_.find(idx);
    if (it == images_.end()) {
        const ImageRGBA img = read_png(dir_ / manifest_.views[idx].image_path);
        it = images_.emplace(idx, composite_over(img, Vec3::Ones())).first;
    }
    if (!it->second.same_size(request.rendered)) {
        throw InvalidArgument("ground-truth guidance: dataset image size differs from the render size");
    }
    return GuidanceResponse{it->second, 1.0};
}

// ---- Adam ----

Adam::Adam(double lr, double beta1, double beta2, double eps) : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::step(std::span<double> params, std::span<const double> grads) {
    if (params.size() != grads.size()) {
        throw InvalidArgument("Adam::step: parameter and gradient sizes differ");
    }
    if (m_.size() != params.size()) {
        if (!m_.empty()) {
            throw InvalidArgument("Adam::step: parameter count changed without remap");
        }
        m_.assign(params.size(), 0.0);
        v_.assign(params.size(), 0.0);
    }
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, t_);
    const double c2 = 1.0 - std::pow(beta2_, t_);
    for (std::size_t i = 0; i < params.size(); ++i) {
        m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grads[i];
        v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grads[i] * grads[i];
        const double m_hat = m_[i] / c1;
        const double v_hat = v_[i] / c2;
        params[i] -= lr_ * m_hat / (std::sqrt(v_hat) + eps_);
    }
}

void Adam::remap(const std::vector<std::int64_t> &source, std::size_t width) {
    if (m_.empty()) {
        return;
    }
    std::vector<double> m(source.size() * width, 0.0), v(source.size() * width, 0.0);
    for (std::size_t k = 0; k < source.size(); ++k) {
        if (source[k] < 0) {
            continue;
        }
        const auto s = static_cast<std::size_t>(source[k]);
        for (std::size_t j = 0; j < width; ++j) {
            m[k * width + j] = m_[s * width + j];
            v[k * width + j] = v_[s * width + j];
        }
    }
    m_ = std::move(m);
    v_ = std::move(v);
}

// ---- configuration ----

void LearningRates::validate() const {
    for (double lr : {position, scale, rotation, opacity, color}) {
        if (!(lr > 0.0) || !std::isfinite(lr)) {
            throw InvalidArgument("learning rates must be positive");
        }
    }
    if (!(position_final_ratio > 0.0 && position_final_ratio <= 1.0)) {
        throw InvalidArgument("position_final_ratio must lie in (0, 1]");
    }
}

void DensifyConfig::validate() const {
    if (interval < 1) {
        throw InvalidArgument("densify interval must be at least 1");
    }
    if (!(prune_opacity > 0.0 && prune_opacity < 1.0)) {
        throw InvalidArgument("prune_opacity must lie in (0, 1)");
    }
    if (!(grad_threshold >= 0.0) || !(split_scale_threshold > 0.0)) {
        throw InvalidArgument("densify thresholds must be non-negative");
    }
    if (max_gaussians < 1) {
        throw InvalidArgument("max_gaussians must be at least 1");
    }
}

void ReconstructionConfig::validate() const {
    if (iterations < 1) {
        throw InvalidArgument("iterations must be at least 1");
    }
    if (initial_gaussians < 1) {
        throw InvalidArgument("initial_gaussians must be at least 1");
    }
    if (!(init_radius > 0.0)) {
        throw InvalidArgument("init_radius must be positive");
    }
    if (!(lambda_rgb >= 0.0) || !(lambda_mask >= 0.0)) {
        throw InvalidArgument("loss weights must be non-negative");
    }
    if (!(elevation_min_deg <= elevation_max_deg) || elevation_min_deg < -90.0 || elevation_max_deg > 90.0) {
        throw InvalidArgument("elevation range must be ordered and inside [-90, 90]");
    }
    if (!(fov_y_deg > 0.0 && fov_y_deg < 180.0)) {
        throw InvalidArgument("fov_y_deg must lie in (0, 180)");
    }
    if (!looks_at_origin(reference_pose, 1e-6)) {
        throw InvalidArgument("reference pose must look at the origin");
    }
    lr.validate();
    densify.validate();
}

// ---- initialization ----

GaussianCloud init_cloud(const ImageRGBA &reference, int n, double radius, std::uint64_t seed) {
    if (n < 1) {
        throw InvalidArgument("init_cloud: n must be at least 1");
    }
    if (!(radius > 0.0)) {
        throw InvalidArgument("init_cloud: radius must be positive");
    }
    Vec3 color_sum = Vec3::Zero();
    std::size_t fg = 0;
    for (int y = 0; y < reference.height(); ++y) {
        for (int x = 0; x < reference.width(); ++x) {
            if (reference.alpha(x, y) >= 0.5) {
                color_sum += Vec3(reference.at(x, y, 0), reference.at(x, y, 1), reference.at(x, y, 2));
                ++fg;
            }
        }
    }
    if (fg == 0) {
        throw EmptyInput("init_cloud: reference image has no foreground");
    }
    const Vec3 color = color_sum / static_cast<double>(fg);
    // Expected nearest-neighbour distance of n uniform points in a ball of this radius.
    const double spacing = std::tgamma(4.0 / 3.0) * radius / std::cbrt(static_cast<double>(n));

    std::mt19937_64 rng(seed);
    GaussianCloud cloud;
    for (int i = 0; i < n; ++i) {
        Vec3 p;
        do {
            p = Vec3(uniform01(rng), uniform01(rng), uniform01(rng)) * 2.0 - Vec3::Ones();
        } while (p.squaredNorm() > 1.0);
        Gaussian3D g;
        g.position = p * radius;
        g.log_scale = Vec3::Constant(std::log(spacing));
        g.opacity_logit = logit(0.1);
        g.color = color;
        cloud.push_back(g);
    }
    cloud.apply_clamps();
    return cloud;
}

// ---- densification ----

void DensifyStats::accumulate(const CloudGradients &grads) {
    if (grads.size() != grad_sum.size()) {
        throw InvalidArgument("DensifyStats: gradient size mismatch");
    }
    for (std::size_t i = 0; i < grad_sum.size(); ++i) {
        if (grads.visible[i]) {
            grad_sum[i] += grads.mean2d_norm[i];
            ++views[i];
        }
    }
}

DensifyResult densify_and_prune(const GaussianCloud &cloud, const DensifyStats &stats, const DensifyConfig &cfg,
                                std::mt19937_64 &rng) {
    cfg.validate();
    const std::size_t n = cloud.size();
    if (stats.grad_sum.size() != n) {
        throw InvalidArgument("densify_and_prune: stats size mismatch");
    }
    const auto cap = static_cast<std::size_t>(cfg.max_gaussians);

    std::vector<bool> removed(n, false);
    GaussianCloud added;
    std::vector<std::int64_t> added_source;
    DensifyResult result;
    std::size_t count = n;
    for (std::size_t i = 0; i < n && count < cap; ++i) {
        if (!(stats.mean(i) > cfg.grad_threshold)) {
            continue;
        }
        const Gaussian3D g = cloud.get(i);
        const Vec3 scale = g.log_scale.array().exp();
        if (scale.maxCoeff() < cfg.split_scale_threshold) {
            added.push_back(g);
            added_source.push_back(-1);
            ++result.cloned;
            ++count;
            continue;
        }
        const Mat3 rot = quaternion_rotation(g.rotation);
        for (int child = 0; child < 2; ++child) {
            const Vec3 z(standard_normal(rng), standard_normal(rng), standard_normal(rng));
            Gaussian3D c = g;
            c.position = g.position + rot * scale.cwiseProduct(z);
            c.log_scale = g.log_scale - Vec3::Constant(std::log(1.6));
            added.push_back(c);
            added_source.push_back(-1);
        }
        removed[i] = true;
        ++result.split;
        ++count;
    }

    auto keep = [&](const Gaussian3D &g) { return sigmoid(g.opacity_logit) >= cfg.prune_opacity; };
    for (std::size_t i = 0; i < n; ++i) {
        if (removed[i]) {
            continue;
        }
        const Gaussian3D g = cloud.get(i);
        if (keep(g)) {
            result.cloud.push_back(g);
            result.source.push_back(static_cast<std::int64_t>(i));
        } else {
            ++result.pruned;
        }
    }
    for (std::size_t k = 0; k < added.size(); ++k) {
        const Gaussian3D g = added.get(k);
        if (keep(g)) {
            result.cloud.push_back(g);
            result.source.push_back(added_source[k]);
        } else {
            ++result.pruned;
        }
    }
    result.cloud.apply_clamps();
    return result;
}

// ---- optimization loop ----

namespace {

struct LossTerms {
    double value = 0.0;
    std::vector<double> dl_dcolor;
    std::vector<double> dl_dalpha;
};

/// w_rgb * mean((rgb - target_rgb)^2) + w_alpha * mean((alpha - target_alpha)^2).
LossTerms image_loss(const ImageRGBA &render, const ImageRGBA &target, double w_rgb, double w_alpha) {
    const std::size_t n = render.pixel_count();
    LossTerms l;
    l.dl_dcolor.assign(3 * n, 0.0);
    l.dl_dalpha.assign(n, 0.0);
    const auto r = render.data();
    const auto t = target.data();
    double sum_rgb = 0.0, sum_a = 0.0;
    const double k_rgb = w_rgb / (3.0 * static_cast<double>(n));
    const double k_a = w_alpha / static_cast<double>(n);
    for (std::size_t p = 0; p < n; ++p) {
        for (std::size_t c = 0; c < 3; ++c) {
            const double d = r[4 * p + c] - t[4 * p + c];
            sum_rgb += d * d;
            l.dl_dcolor[3 * p + c] = 2.0 * k_rgb * d;
        }
        const double d = r[4 * p + 3] - t[4 * p + 3];
        sum_a += d * d;
        l.dl_dalpha[p] = 2.0 * k_a * d;
    }
    l.value = k_rgb * sum_rgb + k_a * sum_a;
    return l;
}

struct ParamOptimizers {
    Adam position, scale, rotation, opacity, color;

    explicit ParamOptimizers(const LearningRates &lr)
        : position(lr.position), scale(lr.scale), rotation(lr.rotation), opacity(lr.opacity), color(lr.color) {}

    void step(GaussianCloud &cloud, const CloudGradients &g) {
        position.step(cloud.positions, g.positions);
        scale.step(cloud.log_scales, g.log_scales);
        rotation.step(cloud.rotations, g.rotations);
        opacity.step(cloud.opacity_logits, g.opacity_logits);
        color.step(cloud.colors, g.colors);
    }

    void remap(const std::vector<std::int64_t> &source) {
        position.remap(source, 3);
        scale.remap(source, 3);
        rotation.remap(source, 4);
        opacity.remap(source, 1);
        color.remap(source, 3);
    }
};

[[noreturn]] void abort_run(const ReconstructionConfig &config, const GaussianCloud &cloud, int iteration,
                            double loss_ref, double loss_novel) {
    std::string where;
    if (!config.dump_dir.empty()) {
        std::error_code ec;
        std::filesystem::create_directories(config.dump_dir, ec);
        const auto path = config.dump_dir / "abort_state.txt";
        std::ofstream f(path);
        if (f) {
            f << "# iteration " << iteration << " loss_ref " << loss_ref << " loss_novel " << loss_novel << '\n';
            GaussianCloud copy = cloud;
            // Non-finite entries would fail validation; print them raw instead.
            char buf[64];
            for (std::size_t i = 0; i < copy.size(); ++i) {
                const Gaussian3D g = copy.get(i);
                std::snprintf(buf, sizeof(buf), "%zu", i);
                f << buf;
                for (double v : {g.position.x(), g.position.y(), g.position.z(), g.log_scale.x(), g.log_scale.y(),
                                 g.log_scale.z(), g.rotation[0], g.rotation[1], g.rotation[2], g.rotation[3],
                                 g.opacity_logit, g.color.x(), g.color.y(), g.color.z()}) {
                    std::snprintf(buf, sizeof(buf), " %.9g", v);
                    f << buf;
                }
                f << '\n';
            }
            where = "; state written to " + path.string();
        }
    }
    throw OptimizationAborted("non-finite loss at iteration " + std::to_string(iteration) + " (ref " +
                              std::to_string(loss_ref) + ", novel " + std::to_string(loss_novel) + ")" + where);
}

} // namespace

ReconstructionResult optimize(const ImageRGBA &reference, GuidanceProvider &guidance,
                              const ReconstructionConfig &config, const IterationCallback &on_iteration) {
    config.validate();
    if (reference.empty()) {
        throw EmptyInput("optimize: empty reference image");
    }
    CameraIntrinsics intr;
    intr.fov_y_deg = config.fov_y_deg;
    intr.width = reference.width();
    intr.height = reference.height();
    intr.validate();

    const Vec3 white = Vec3::Ones();
    const ImageRGBA reference_white = composite_over(reference, white);
    // The reference loss compares the white-composited render to the white-composited
    // reference in RGB and the raw coverage in alpha.
    ImageRGBA ref_target = reference_white;
    for (int y = 0; y < reference.height(); ++y) {
        for (int x = 0; x < reference.width(); ++x) {
            ref_target.at(x, y, 3) = reference.alpha(x, y);
        }
    }

    ReconstructionResult result;
    result.cloud = init_cloud(reference, config.initial_gaussians, config.init_radius, config.seed);
    GaussianCloud &cloud = result.cloud;
    ParamOptimizers adam(config.lr);
    DensifyStats stats(cloud.size());
    std::mt19937_64 pose_rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
    std::mt19937_64 densify_rng(config.seed ^ 0xd1b54a32d192ed03ULL);

    for (int it = 0; it < config.iterations; ++it) {
        const double progress = config.iterations > 1 ? static_cast<double>(it) / (config.iterations - 1) : 0.0;
        adam.position.set_lr(config.lr.position * std::pow(config.lr.position_final_ratio, progress));

        const RenderOutput ref_out = render(cloud, intr, config.reference_pose, white);
        const LossTerms ref_loss = image_loss(ref_out.color, ref_target, config.lambda_rgb, config.lambda_mask);

        RelativePose delta;
        delta.delta_azimuth_deg = wrap_degrees(360.0 * uniform01(pose_rng));
        delta.delta_elevation_deg =
            config.elevation_min_deg + (config.elevation_max_deg - config.elevation_min_deg) * uniform01(pose_rng);
        const CameraPose novel_pose =
            guidance.lattice_pose(config.reference_pose, delta).value_or(pose_from_relative(config.reference_pose, delta));
        const RenderOutput novel_out = render(cloud, intr, novel_pose, white);

        GuidanceRequest request;
        request.rendered = novel_out.color;
        for (std::size_t p = 0; p < request.rendered.pixel_count(); ++p) {
            request.rendered.data()[4 * p + 3] = 1.0;
        }
        request.reference = reference_white;
        request.relative_pose = delta;
        request.step = it;
        request.total_steps = config.iterations;
        const GuidanceResponse response = guidance.provide_target(request);
        if (!response.target.same_size(novel_out.color)) {
            throw ProtocolError("guidance target size differs from the render size");
        }
        if (!(response.weight >= 0.0) || !std::isfinite(response.weight)) {
            throw ProtocolError("guidance weight must be finite and non-negative");
        }
        const LossTerms novel_loss = image_loss(novel_out.color, response.target, response.weight, 0.0);

        if (!std::isfinite(ref_loss.value) || !std::isfinite(novel_loss.value)) {
            abort_run(config, cloud, it, ref_loss.value, novel_loss.value);
        }

        CloudGradients grads = render_backward(cloud, ref_out, ref_loss.dl_dcolor, ref_loss.dl_dalpha);
        const CloudGradients novel_grads =
            render_backward(cloud, novel_out, novel_loss.dl_dcolor, novel_loss.dl_dalpha);
        stats.accumulate(grads);
        stats.accumulate(novel_grads);
        grads.add(novel_grads);

        adam.step(cloud, grads);
        cloud.apply_clamps();

        if ((it + 1) % config.densify.interval == 0 && it + 1 < config.iterations) {
            DensifyResult d = densify_and_prune(cloud, stats, config.densify, densify_rng);
            spdlog::debug("iteration {}: cloned {}, split {}, pruned {}, {} Gaussians", it + 1, d.cloned, d.split,
                          d.pruned, d.cloud.size());
            adam.remap(d.source);
            cloud = std::move(d.cloud);
            stats = DensifyStats(cloud.size());
        }

        result.trace.push_back(TraceRow{it, ref_loss.value, novel_loss.value, cloud.size()});
        if (on_iteration) {
            on_iteration(it, cloud);
        }
    }
    return result;
}

void write_trace_csv(const std::vector<TraceRow> &trace, const std::filesystem::path &path) {
    std::ofstream f(path);
    if (!f) {
        throw IoError("cannot write '" + path.string() + "'");
    }
    f << "iteration,loss_ref,loss_novel,n_gaussians\n";
    char buf[128];
    for (const TraceRow &r : trace) {
        std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%zu\n", r.iteration, r.loss_ref, r.loss_novel, r.n_gaussians);
        f << buf;
    }
}

} // namespace orbitalsplat
