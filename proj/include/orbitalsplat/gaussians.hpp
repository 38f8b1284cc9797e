// Copyright Contributors to the OrbitalSplat Project
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include "orbitalsplat/geometry.hpp"
#include "orbitalsplat/image.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

namespace orbitalsplat {

using Vec4 = Eigen::Vector4d;

/// Clamp range for log-scales, strictly inside (ln 1e-7, ln 1e2).
inline constexpr double kLogScaleMin = -16.1;
inline constexpr double kLogScaleMax = 4.6;
/// Opacity logits are kept finite so that sigmoid(logit) stays strictly inside (0, 1).
inline constexpr double kLogitLimit = 30.0;

/// Screen-space low-pass added to the projected covariance diagonal, in px^2.
inline constexpr double kCovarianceLowPass = 0.3;
/// Compositing stops once transmittance falls below this.
inline constexpr double kMinTransmittance = 1e-4;
/// Rows per work unit of the splat renderer.
inline constexpr int kSplatBandRows = 16;

struct Gaussian3D {
    Vec3 position = Vec3::Zero();
    Vec3 log_scale = Vec3::Zero();
    /// Raw (possibly unnormalized) quaternion, w first.
    Vec4 rotation = Vec4(1.0, 0.0, 0.0, 0.0);
    double opacity_logit = 0.0;
    Vec3 color = Vec3::Constant(0.5);

    double opacity() const;
};

double sigmoid(double x);
double logit(double p);

/// Field-per-attribute storage for N Gaussians.
struct GaussianCloud {
    std::vector<double> positions;      ///< 3N
    std::vector<double> log_scales;     ///< 3N
    std::vector<double> rotations;      ///< 4N, w x y z
    std::vector<double> opacity_logits; ///< N
    std::vector<double> colors;         ///< 3N

    std::size_t size() const { return opacity_logits.size(); }
    bool empty() const { return opacity_logits.empty(); }
    void resize(std::size_t n);
    void push_back(const Gaussian3D &g);
    Gaussian3D get(std::size_t i) const;
    void set(std::size_t i, const Gaussian3D &g);

    /// Throws InvalidArgument on inconsistent array lengths or non-finite values.
    void validate() const;
    /// Clamps log-scales, logits and colors into range and renormalizes rotations.
    void apply_clamps();
    /// Content hash used to tie a blend cache to the cloud it was rendered from.
    std::uint64_t fingerprint() const;
};

/// Same layout as GaussianCloud, holding dL/d(raw parameter).
struct CloudGradients {
    std::vector<double> positions;
    std::vector<double> log_scales;
    std::vector<double> rotations;
    std::vector<double> opacity_logits;
    std::vector<double> colors;
    /// |dL/d mean2d| with image coordinates normalized to [-1, 1]; 0 for invisible Gaussians.
    std::vector<double> mean2d_norm;
    /// 1 where the Gaussian was projected in front of the camera and overlapped the image.
    std::vector<std::uint8_t> visible;

    explicit CloudGradients(std::size_t n = 0);
    std::size_t size() const { return opacity_logits.size(); }
    /// this += other (sizes must match).
    void add(const CloudGradients &other);
    bool all_zero() const;
};

/// Sigma = R S S^T R^T with S = diag(exp(log_scale)) and R from the normalized rotation.
Mat3 covariance3d(const Gaussian3D &g);
Mat3 quaternion_rotation(const Vec4 &q_wxyz);

struct ProjectedGaussian {
    Vec2 mean;  ///< pixels
    Mat2 cov;   ///< px^2, low-pass included
    double depth = 0.0;
    /// Half extent of the 3 sigma support box, pixels.
    double radius = 0.0;
};

/// EWA projection. Empty when the center is not beyond the near plane.
std::optional<ProjectedGaussian> project_gaussian(const Gaussian3D &g, const CameraIntrinsics &intr,
                                                  const CameraPose &pose);

/// Falloff weight applied on top of exp(-p/2), p the squared Mahalanobis distance: 1 inside
/// 7, 0 beyond 9 (3 sigma), a C2 smoothstep in between so the renderer stays differentiable.
double support_weight(double p);
double support_weight_derivative(double p);

struct Contributor {
    std::uint32_t index = 0;
    double alpha = 0.0;         ///< effective opacity alpha'
    double transmittance = 0.0; ///< transmittance in front of this contributor
};

/// Forward-pass record consumed by render_backward.
class BlendCache {
  public:
    /// Sorted front-to-back contributors of one pixel.
    std::vector<Contributor> contributors(int x, int y) const;
    double final_transmittance(int x, int y) const;
    std::uint64_t fingerprint() const { return fingerprint_; }

  private:
    friend struct SplatRasterizer;

    CameraIntrinsics intr_;
    CameraPose pose_;
    Vec3 background_ = Vec3::Ones();
    std::uint64_t fingerprint_ = 0;
    std::size_t n_gaussians_ = 0;

    // Per-Gaussian projected state.
    std::vector<double> mean_;  // 2N
    std::vector<double> conic_; // 3N (a, b, c) of the inverse 2D covariance
    std::vector<double> alpha_; // N
    std::vector<double> color_; // 3N
    std::vector<double> depth_; // N
    std::vector<std::uint8_t> visible_;

    // Contributions are recorded per band of kSplatBandRows image rows, grouped by Gaussian in
    // front-to-back order.
    struct Hit {
        std::uint32_t pixel; // row-major pixel index
        double alpha;        // alpha'
        double t;            // transmittance in front
    };
    struct Segment {
        std::uint32_t gaussian;
        std::uint32_t begin; // first hit; a segment ends where the next begins
    };
    struct Band {
        std::vector<Segment> segments;
        std::vector<Hit> hits;
    };
    std::vector<Band> bands_;
    std::vector<double> final_t_; // per pixel
};

struct RenderOutput {
    /// RGB composited over the background; alpha = accumulated opacity.
    ImageRGBA color;
    /// Alpha-weighted expected depth per pixel (row-major); +inf where nothing contributes.
    std::vector<double> depth;
    BlendCache cache;
};

RenderOutput render(const GaussianCloud &cloud, const CameraIntrinsics &intr, const CameraPose &pose,
                    const Vec3 &background_rgb);

/// Reverse-mode gradients of (color rgb, alpha) with respect to every raw parameter.
/// `dl_dcolor` is H*W*3 and `dl_dalpha` is H*W, both row-major. Throws InvalidArgument when the
/// cache was produced from a different cloud or the gradient buffers have the wrong size.
CloudGradients render_backward(const GaussianCloud &cloud, const RenderOutput &out,
                               std::span<const double> dl_dcolor, std::span<const double> dl_dalpha);

/// Binary format: "OSGC", uint32 version, uint64 N, then N records of 14 little-endian float32
/// (position xyz, log_scale xyz, rotation wxyz, opacity logit, rgb).
void save_cloud(const GaussianCloud &cloud, const std::filesystem::path &path);
GaussianCloud load_cloud(const std::filesystem::path &path);
void write_cloud_binary(const GaussianCloud &cloud, std::ostream &os);
GaussianCloud read_cloud_binary(std::istream &is);
/// One Gaussian per line, same field order as the binary format.
void write_cloud_text(const GaussianCloud &cloud, std::ostream &os);
GaussianCloud read_cloud_text(std::istream &is);

} // namespace orbitalsplat
