// Copyright Contributors to the OrbitalSplat Project
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include "orbitalsplat/dataset.hpp"
#include "orbitalsplat/gaussians.hpp"
#include "orbitalsplat/geometry.hpp"
#include "orbitalsplat/image.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <vector>

namespace orbitalsplat {

struct GuidanceRequest {
    /// Opaque render composited over white.
    ImageRGBA rendered;
    /// Reference composited over white.
    ImageRGBA reference;
    RelativePose relative_pose;
    int step = 0;
    int total_steps = 1;

    void validate() const;
};

struct GuidanceResponse {
    ImageRGBA target;
    double weight = 1.0;
};

/// Source of novel-view supervision.
class GuidanceProvider {
  public:
    virtual ~GuidanceProvider() = default;
    virtual GuidanceResponse provide_target(const GuidanceRequest &request) = 0;
    /// Lets a provider whose targets exist only at fixed cameras replace the sampled pose with
    /// the exact camera it will answer for. The default keeps the sampled pose.
    virtual std::optional<CameraPose> lattice_pose(const CameraPose &reference, const RelativePose &delta) {
        (void)reference;
        (void)delta;
        return std::nullopt;
    }
};

/// Answers with the dataset view closest (great-circle angle of the absolute camera direction)
/// to the requested pose, weight 1. Equal distances pick the lower manifest index.
class GroundTruthGuidance : public GuidanceProvider {
  public:
    /// Images are loaded from `dataset_dir` and composited over white. Views listed in
    /// `excluded` are never returned.
    GroundTruthGuidance(const DatasetManifest &manifest, const std::filesystem::path &dataset_dir,
                        const CameraPose &reference_pose, std::vector<std::size_t> excluded = {});

    GuidanceResponse provide_target(const GuidanceRequest &request) override;
    std::optional<CameraPose> lattice_pose(const CameraPose &reference, const RelativePose &delta) override;

    /// Manifest index of the view answering for `delta` relative to `reference`.
    std::size_t nearest_view(const CameraPose &reference, const RelativePose &delta) const;
    std::size_t calls() const { return calls_; }

  private:
    DatasetManifest manifest_;
    std::filesystem::path dir_;
    CameraPose reference_pose_;
    std::vector<bool> excluded_;
    std::map<std::size_t, ImageRGBA> images_;
    std::size_t calls_ = 0;
};

/// Adam with bias correction, one instance per parameter group.
class Adam {
  public:
    Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-15);
    void set_lr(double lr) { lr_ = lr; }
    double lr() const { return lr_; }
    int steps() const { return t_; }
    /// Advances the step counter and updates params in place. State is resized on first use.
    void step(std::span<double> params, std::span<const double> grads);
    /// Rebuilds the moment buffers after densification: new element k inherits nothing (zero
    /// moments); `source[k]` >= 0 keeps the moments of old element source[k]. `width` values
    /// per element.
    void remap(const std::vector<std::int64_t> &source, std::size_t width);

  private:
    double lr_, beta1_, beta2_, eps_;
    int t_ = 0;
    std::vector<double> m_, v_;
};

struct LearningRates {
    double position = 1.6e-3;
    /// Position rate decays exponentially to position * position_final_ratio at the last step.
    double position_final_ratio = 0.01;
    double scale = 5e-3;
    double rotation = 1e-3;
    double opacity = 5e-2;
    double color = 1e-2;

    void validate() const;
};

struct DensifyConfig {
    int interval = 100;
    /// Mean |dL/d mean2d| over views, image coordinates normalized to [-1, 1].
    double grad_threshold = 2e-4;
    /// Largest scale component below which a Gaussian is cloned instead of split, scene units.
    double split_scale_threshold = 0.02;
    double prune_opacity = 0.05;
    int max_gaussians = 100000;

    void validate() const;
};

struct ReconstructionConfig {
    int iterations = 2000;
    int initial_gaussians = 5000;
    double init_radius = 0.5;
    LearningRates lr;
    double elevation_min_deg = -30.0;
    double elevation_max_deg = 30.0;
    CameraPose reference_pose = look_at(Vec3(2.0, 0.0, 0.0), Vec3::Zero(), Vec3::UnitZ());
    double fov_y_deg = 49.1;
    double lambda_rgb = 1.0;
    double lambda_mask = 1.0;
    DensifyConfig densify;
    std::uint64_t seed = 0;
    /// Where a state dump goes when the loss turns non-finite. Empty: no dump.
    std::filesystem::path dump_dir;

    void validate() const;
};

struct TraceRow {
    int iteration = 0;
    double loss_ref = 0.0;
    double loss_novel = 0.0;
    std::size_t n_gaussians = 0;
};

struct ReconstructionResult {
    GaussianCloud cloud;
    std::vector<TraceRow> trace;
};

/// Called after every iteration with the 0-based iteration index.
using IterationCallback = std::function<void(int iteration, const GaussianCloud &cloud)>;

GaussianCloud init_cloud(const ImageRGBA &reference, int n, double radius, std::uint64_t seed);

ReconstructionResult optimize(const ImageRGBA &reference, GuidanceProvider &guidance,
                              const ReconstructionConfig &config, const IterationCallback &on_iteration = {});

/// Accumulated screen-space gradient statistics since the last densification.
struct DensifyStats {
    std::vector<double> grad_sum;
    std::vector<int> views;

    explicit DensifyStats(std::size_t n = 0) : grad_sum(n, 0.0), views(n, 0) {}
    void accumulate(const CloudGradients &grads);
    double mean(std::size_t i) const { return views[i] > 0 ? grad_sum[i] / views[i] : 0.0; }
};

struct DensifyResult {
    GaussianCloud cloud;
    /// For every output Gaussian, the input Gaussian whose optimizer state it keeps, or -1.
    std::vector<std::int64_t> source;
    std::size_t cloned = 0;
    std::size_t split = 0;
    std::size_t pruned = 0;
};

DensifyResult densify_and_prune(const GaussianCloud &cloud, const DensifyStats &stats, const DensifyConfig &cfg,
                                std::mt19937_64 &rng);

void write_trace_csv(const std::vector<TraceRow> &trace, const std::filesystem::path &path);

/// Uniform double in [0, 1) from the top 53 bits; avoids library-specific distributions.
double uniform01(std::mt19937_64 &rng);
double standard_normal(std::mt19937_64 &rng);

} // namespace orbitalsplat
