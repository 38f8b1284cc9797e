// Copyright Contributors to the OrbitalSplat Project
// SPDX-License-Identifier: Apache-2.0
//
#include "orbitalsplat/gaussians.hpp"

#include "orbitalsplat/error.hpp"
#include "orbitalsplat/parallel.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>

namespace orbitalsplat {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double logit(double p) {
    if (!(p > 0.0 && p < 1.0)) {
        throw InvalidArgument("logit: probability must lie in (0, 1)");
    }
    return std::log(p / (1.0 - p));
}

double Gaussian3D::opacity() const { return sigmoid(opacity_logit); }

void GaussianCloud::resize(std::size_t n) {
    positions.resize(3 * n, 0.0);
    log_scales.resize(3 * n, 0.0);
    rotations.resize(4 * n, 0.0);
    opacity_logits.resize(n, 0.0);
    colors.resize(3 * n, 0.5);
}

void GaussianCloud::push_back(const Gaussian3D &g) {
    for (int k = 0; k < 3; ++k) {
        positions.push_back(g.position[k]);
        log_scales.push_back(g.log_scale[k]);
        colors.push_back(g.color[k]);
    }
    for (int k = 0; k < 4; ++k) {
        rotations.push_back(g.rotation[k]);
    }
    opacity_logits.push_back(g.opacity_logit);
}

Gaussian3D GaussianCloud::get(std::size_t i) const {
    Gaussian3D g;
    g.position = Vec3(positions[3 * i], positions[3 * i + 1], positions[3 * i + 2]);
    g.log_scale = Vec3(log_scales[3 * i], log_scales[3 * i + 1], log_scales[3 * i + 2]);
    g.rotation = Vec4(rotations[4 * i], rotations[4 * i + 1], rotations[4 * i + 2], rotations[4 * i + 3]);
    g.opacity_logit = opacity_logits[i];
    g.color = Vec3(colors[3 * i], colors[3 * i + 1], colors[3 * i + 2]);
    return g;
}

void GaussianCloud::set(std::size_t i, const Gaussian3D &g) {
    for (std::size_t k = 0; k < 3; ++k) {
        positions[3 * i + k] = g.position[static_cast<int>(k)];
        log_scales[3 * i + k] = g.log_scale[static_cast<int>(k)];
        colors[3 * i + k] = g.color[static_cast<int>(k)];
    }
    for (std::size_t k = 0; k < 4; ++k) {
        rotations[4 * i + k] = g.rotation[static_cast<int>(k)];
    }
    opacity_logits[i] = g.opacity_logit;
}

void GaussianCloud::validate() const {
    const std::size_t n = size();
    if (positions.size() != 3 * n || log_scales.size() != 3 * n || rotations.size() != 4 * n ||
        colors.size() != 3 * n) {
        throw InvalidArgument("gaussian cloud arrays have inconsistent lengths");
    }
    auto finite = [](const std::vector<double> &v) {
        return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
    };
    if (!finite(positions) || !finite(log_scales) || !finite(rotations) || !finite(opacity_logits) ||
        !finite(colors)) {
        throw InvalidArgument("gaussian cloud contains non-finite values");
    }
    for (std::size_t i = 0; i < n; ++i) {
        const double *q = &rotations[4 * i];
        if (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3] == 0.0) {
            throw InvalidArgument("gaussian " + std::to_string(i) + " has a zero rotation quaternion");
        }
    }
}

void GaussianCloud::apply_clamps() {
    for (double &v : log_scales) {
        v = std::clamp(v, kLogScaleMin, kLogScaleMax);
    }
    for (double &v : opacity_logits) {
        v = std::clamp(v, -kLogitLimit, kLogitLimit);
    }
    for (double &v : colors) {
        v = std::clamp(v, 0.0, 1.0);
    }
    for (std::size_t i = 0; i < size(); ++i) {
        double *q = &rotations[4 * i];
        const double norm = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
        if (norm > 0.0 && std::isfinite(norm)) {
            for (int k = 0; k < 4; ++k) {
                q[k] /= norm;
            }
        } else {
            q[0] = 1.0;
            q[1] = q[2] = q[3] = 0.0;
        }
    }
}

std::uint64_t GaussianCloud::fingerprint() const {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](const std::vector<double> &v) {
        for (double x : v) {
            auto bits = std::bit_cast<std::uint64_t>(x);
            for (int b = 0; b < 8; ++b) {
                h ^= (bits >> (8 * b)) & 0xffU;
                h *= 1099511628211ULL;
            }
        }
        h ^= v.size();
        h *= 1099511628211ULL;
    };
    mix(positions);
    mix(log_scales);
    mix(rotations);
    mix(opacity_logits);
    mix(colors);
    return h;
}

CloudGradients::CloudGradients(std::size_t n)
    : positions(3 * n, 0.0), log_scales(3 * n, 0.0), rotations(4 * n, 0.0), opacity_logits(n, 0.0),
      colors(3 * n, 0.0), mean2d_norm(n, 0.0), visible(n, 0) {}

void CloudGradients::add(const CloudGradients &other) {
    if (other.size() != size()) {
        throw InvalidArgument("CloudGradients::add: size mismatch");
    }
    auto acc = [](std::vector<double> &a, const std::vector<double> &b) {
        for (std::size_t i = 0; i < a.size(); ++i) {
            a[i] += b[i];
        }
    };
    acc(positions, other.positions);
    acc(log_scales, other.log_scales);
    acc(rotations, other.rotations);
    acc(opacity_logits, other.opacity_logits);
    acc(colors, other.colors);
    acc(mean2d_norm, other.mean2d_norm);
    for (std::size_t i = 0; i < visible.size(); ++i) {
        visible[i] = static_cast<std::uint8_t>(visible[i] | other.visible[i]);
    }
}

bool CloudGradients::all_zero() const {
    auto zero = [](const std::vector<double> &v) {
        return std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; });
    };
    return zero(positions) && zero(log_scales) && zero(rotations) && zero(opacity_logits) && zero(colors);
}

Mat3 quaternion_rotation(const Vec4 &q_wxyz) {
    const double norm = q_wxyz.norm();
    if (!(norm > 0.0)) {
        throw InvalidArgument("quaternion_rotation: zero quaternion");
    }
    const double w = q_wxyz[0] / norm, x = q_wxyz[1] / norm, y = q_wxyz[2] / norm, z = q_wxyz[3] / norm;
    Mat3 r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y), //
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),  //
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return r;
}

Mat3 covariance3d(const Gaussian3D &g) {
    const Mat3 r = quaternion_rotation(g.rotation);
    const Vec3 s2 = (2.0 * g.log_scale).array().exp();
    Mat3 sigma = r * s2.asDiagonal() * r.transpose();
    return 0.5 * (sigma + sigma.transpose());
}

double support_weight(double p) {
    if (p <= 7.0) {
        return 1.0;
    }
    if (p >= 9.0) {
        return 0.0;
    }
    const double s = 0.5 * (9.0 - p);
    return s * s * s * (s * (6.0 * s - 15.0) + 10.0);
}

double support_weight_derivative(double p) {
    if (p <= 7.0 || p >= 9.0) {
        return 0.0;
    }
    const double s = 0.5 * (9.0 - p);
    return -15.0 * s * s * (s - 1.0) * (s - 1.0);
}

namespace {

/// Everything the forward pass derives for one Gaussian; recomputed identically in backward.
struct Projection {
    bool valid = false;
    Mat3 rot;
    Vec3 scale2; // squared scales
    Vec3 t;      // camera-space center
    Eigen::Matrix<double, 2, 3> jac;
    Mat3 m; // camera-space covariance
    Mat2 cov;
    Mat2 conic;
    Vec2 mean;
    double depth = 0.0;
    double radius = 0.0;
};

Projection project(const GaussianCloud &cloud, std::size_t i, const CameraIntrinsics &intr,
                   const Mat3 &w2c, const Vec3 &cam_pos) {
    Projection p;
    const Vec3 mu(cloud.positions[3 * i], cloud.positions[3 * i + 1], cloud.positions[3 * i + 2]);
    p.t = w2c * (mu - cam_pos);
    p.depth = -p.t.z();
    if (!(p.depth > intr.near_plane)) {
        return p;
    }
    const double f = intr.focal();
    const double tz = p.t.z();
    p.rot = quaternion_rotation(
        Vec4(cloud.rotations[4 * i], cloud.rotations[4 * i + 1], cloud.rotations[4 * i + 2], cloud.rotations[4 * i + 3]));
    for (int k = 0; k < 3; ++k) {
        p.scale2[k] = std::exp(2.0 * cloud.log_scales[3 * i + static_cast<std::size_t>(k)]);
    }
    const Mat3 sigma = p.rot * p.scale2.asDiagonal() * p.rot.transpose();
    p.m = w2c * sigma * w2c.transpose();
    p.jac << -f / tz, 0.0, f * p.t.x() / (tz * tz), //
        0.0, f / tz, -f * p.t.y() / (tz * tz);
    p.cov = p.jac * p.m * p.jac.transpose();
    p.cov(0, 1) = p.cov(1, 0) = 0.5 * (p.cov(0, 1) + p.cov(1, 0));
    p.cov(0, 0) += kCovarianceLowPass;
    p.cov(1, 1) += kCovarianceLowPass;
    const double det = p.cov(0, 0) * p.cov(1, 1) - p.cov(0, 1) * p.cov(0, 1);
    if (!(det > 0.0) || !std::isfinite(det)) {
        return p;
    }
    p.conic << p.cov(1, 1) / det, -p.cov(0, 1) / det, -p.cov(0, 1) / det, p.cov(0, 0) / det;
    const double mid = 0.5 * (p.cov(0, 0) + p.cov(1, 1));
    const double half = 0.5 * (p.cov(0, 0) - p.cov(1, 1));
    const double lambda_max = mid + std::sqrt(half * half + p.cov(0, 1) * p.cov(0, 1));
    p.radius = 3.0 * std::sqrt(lambda_max);
    p.mean = Vec2(intr.cx() - f * p.t.x() / tz, intr.cy() + f * p.t.y() / tz);
    p.valid = std::isfinite(p.mean.x()) && std::isfinite(p.mean.y()) && std::isfinite(p.radius);
    return p;
}

struct PixelRange {
    int x0, x1, y0, y1; // inclusive
};

/// Pixels whose centers can lie within `radius` of the mean, clipped to the image.
PixelRange support_pixels(const Vec2 &mean, double radius, int width, int height) {
    PixelRange r;
    r.x0 = std::max(0, static_cast<int>(std::floor(mean.x() - radius - 0.5)));
    r.x1 = std::min(width - 1, static_cast<int>(std::ceil(mean.x() + radius - 0.5)));
    r.y0 = std::max(0, static_cast<int>(std::floor(mean.y() - radius - 0.5)));
    r.y1 = std::min(height - 1, static_cast<int>(std::ceil(mean.y() + radius - 0.5)));
    return r;
}

} // namespace

std::optional<ProjectedGaussian> project_gaussian(const Gaussian3D &g, const CameraIntrinsics &intr,
                                                  const CameraPose &pose) {
    GaussianCloud one;
    one.push_back(g);
    const Projection p = project(one, 0, intr, pose.world_to_camera_rotation(), pose.position);
    if (!p.valid) {
        return std::nullopt;
    }
    return ProjectedGaussian{p.mean, p.cov, p.depth, p.radius};
}

struct SplatRasterizer {
    struct Span {
        int x0, x1; // inclusive, may be empty
    };

    /// Pixel columns of row `y` whose centers may satisfy p < 9, padded by one pixel against
    /// rounding; the caller still tests p exactly.
    static Span row_span(const BlendCache &c, std::uint32_t g, int y, const PixelRange &r) {
        const double dy = y + 0.5 - c.mean_[2 * g + 1];
        const double a = c.conic_[3 * g], b = c.conic_[3 * g + 1], cc = c.conic_[3 * g + 2];
        // a dx^2 + 2 b dy dx + (cc dy^2 - 9) < 0
        const double disc = b * b * dy * dy - a * (cc * dy * dy - 9.0);
        if (!(disc >= 0.0)) {
            return {1, 0};
        }
        const double sq = std::sqrt(disc);
        const double lo = (-b * dy - sq) / a + c.mean_[2 * g] - 0.5;
        const double hi = (-b * dy + sq) / a + c.mean_[2 * g] - 0.5;
        return {std::max(r.x0, static_cast<int>(std::floor(lo)) - 1), std::min(r.x1, static_cast<int>(std::ceil(hi)) + 1)};
    }

    static RenderOutput forward(const GaussianCloud &cloud, const CameraIntrinsics &intr, const CameraPose &pose,
                                const Vec3 &bg) {
        intr.validate();
        cloud.validate();
        RenderOutput out;
        BlendCache &c = out.cache;
        c.intr_ = intr;
        c.pose_ = pose;
        c.background_ = bg;
        c.fingerprint_ = cloud.fingerprint();
        const std::size_t n = cloud.size();
        c.n_gaussians_ = n;
        c.mean_.assign(2 * n, 0.0);
        c.conic_.assign(3 * n, 0.0);
        c.alpha_.assign(n, 0.0);
        c.color_ = cloud.colors;
        c.depth_.assign(n, 0.0);
        c.visible_.assign(n, 0);

        const int width = intr.width;
        const int height = intr.height;
        const Mat3 w2c = pose.world_to_camera_rotation();
        std::vector<PixelRange> ranges(n);
        parallel_for(n, [&](std::size_t i) {
            const Projection p = project(cloud, i, intr, w2c, pose.position);
            if (!p.valid) {
                return;
            }
            const PixelRange r = support_pixels(p.mean, p.radius, width, height);
            if (r.x0 > r.x1 || r.y0 > r.y1) {
                return;
            }
            ranges[i] = r;
            c.visible_[i] = 1;
            c.mean_[2 * i] = p.mean.x();
            c.mean_[2 * i + 1] = p.mean.y();
            c.conic_[3 * i] = p.conic(0, 0);
            c.conic_[3 * i + 1] = p.conic(0, 1);
            c.conic_[3 * i + 2] = p.conic(1, 1);
            c.alpha_[i] = sigmoid(cloud.opacity_logits[i]);
            c.depth_[i] = p.depth;
        });

        std::vector<std::uint32_t> order;
        order.reserve(n);
        for (std::size_t i = 0; i < n; ++i) {
            if (c.visible_[i]) {
                order.push_back(static_cast<std::uint32_t>(i));
            }
        }
        std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
            return c.depth_[a] < c.depth_[b] || (c.depth_[a] == c.depth_[b] && a < b);
        });

        const std::size_t n_pixels = static_cast<std::size_t>(width) * height;
        c.final_t_.assign(n_pixels, 1.0);
        std::vector<double> rgb(3 * n_pixels, 0.0);
        std::vector<double> depth_acc(n_pixels, 0.0);
        const int n_bands = (height + kSplatBandRows - 1) / kSplatBandRows;
        c.bands_.assign(static_cast<std::size_t>(n_bands), {});

        // Each band composites every Gaussian that reaches it, front to back. Bands own disjoint
        // pixels, so the result does not depend on how bands are scheduled.
        parallel_for(static_cast<std::size_t>(n_bands), [&](std::size_t band_index) {
            BlendCache::Band &band = c.bands_[band_index];
            const int band_y0 = static_cast<int>(band_index) * kSplatBandRows;
            const int band_y1 = std::min(height, band_y0 + kSplatBandRows) - 1;
            for (std::uint32_t g : order) {
                const PixelRange &r = ranges[g];
                if (r.y1 < band_y0 || r.y0 > band_y1) {
                    continue;
                }
                const auto begin = static_cast<std::uint32_t>(band.hits.size());
                const double mx = c.mean_[2 * g], my = c.mean_[2 * g + 1];
                const double qa = c.conic_[3 * g], qb = c.conic_[3 * g + 1], qc = c.conic_[3 * g + 2];
                const double alpha = c.alpha_[g];
                const double *col = &c.color_[3 * g];
                for (int y = std::max(r.y0, band_y0); y <= std::min(r.y1, band_y1); ++y) {
                    const Span span = row_span(c, g, y, r);
                    const double dy = y + 0.5 - my;
                    for (int x = span.x0; x <= span.x1; ++x) {
                        const std::size_t pix = static_cast<std::size_t>(y) * width + x;
                        double &t = c.final_t_[pix];
                        if (t < kMinTransmittance) {
                            continue;
                        }
                        const double dx = x + 0.5 - mx;
                        const double p = qa * dx * dx + 2.0 * qb * dx * dy + qc * dy * dy;
                        if (!(p < 9.0)) {
                            continue;
                        }
                        const double a = alpha * std::exp(-0.5 * p) * support_weight(p);
                        if (!(a > 0.0)) {
                            continue;
                        }
                        band.hits.push_back({static_cast<std::uint32_t>(pix), a, t});
                        const double wgt = a * t;
                        rgb[3 * pix] += col[0] * wgt;
                        rgb[3 * pix + 1] += col[1] * wgt;
                        rgb[3 * pix + 2] += col[2] * wgt;
                        depth_acc[pix] += c.depth_[g] * wgt;
                        t *= 1.0 - a;
                    }
                }
                if (band.hits.size() > begin) {
                    band.segments.push_back({g, begin});
                }
            }
        });

        out.color = ImageRGBA(width, height);
        out.depth.assign(n_pixels, std::numeric_limits<double>::infinity());
        auto px = out.color.data();
        for (std::size_t pix = 0; pix < n_pixels; ++pix) {
            const double t = c.final_t_[pix];
            for (std::size_t ch = 0; ch < 3; ++ch) {
                px[4 * pix + ch] = rgb[3 * pix + ch] + t * bg[static_cast<int>(ch)];
            }
            px[4 * pix + 3] = 1.0 - t;
            if (t < 1.0) {
                out.depth[pix] = depth_acc[pix] / (1.0 - t);
            }
        }
        return out;
    }

    static std::vector<Contributor> contributors(const BlendCache &c, int x, int y) {
        const int width = c.intr_.width;
        if (x < 0 || y < 0 || x >= width || y >= c.intr_.height) {
            throw InvalidArgument("contributors: pixel outside the image");
        }
        const auto pix = static_cast<std::uint32_t>(y * width + x);
        const BlendCache::Band &band = c.bands_[static_cast<std::size_t>(y / kSplatBandRows)];
        std::vector<Contributor> out;
        for (std::size_t s = 0; s < band.segments.size(); ++s) {
            const std::size_t end = s + 1 < band.segments.size() ? band.segments[s + 1].begin : band.hits.size();
            for (std::size_t k = band.segments[s].begin; k < end; ++k) {
                if (band.hits[k].pixel == pix) {
                    out.push_back(Contributor{band.segments[s].gaussian, band.hits[k].alpha, band.hits[k].t});
                }
            }
        }
        return out;
    }

    // Screen-space gradient slots per segment.
    enum Slot { kU, kV, kA, kB, kC, kAlpha, kR, kG, kBlue, kSlots };

    static CloudGradients backward(const GaussianCloud &cloud, const RenderOutput &out,
                                   std::span<const double> dl_dcolor, std::span<const double> dl_dalpha) {
        const BlendCache &c = out.cache;
        if (c.n_gaussians_ != cloud.size() || c.fingerprint_ != cloud.fingerprint()) {
            throw InvalidArgument("render_backward: blend cache does not belong to this cloud");
        }
        const int width = c.intr_.width;
        const int height = c.intr_.height;
        const std::size_t n_pixels = static_cast<std::size_t>(width) * height;
        if (dl_dcolor.size() != 3 * n_pixels || dl_dalpha.size() != n_pixels) {
            throw InvalidArgument("render_backward: gradient buffers do not match the image size");
        }
        const std::size_t n = cloud.size();
        const Vec3 bg = c.background_;
        // What lies behind the current contributor, per pixel: starts at the background.
        std::vector<double> behind_rgb(3 * n_pixels), behind_a(n_pixels, 0.0);
        for (std::size_t pix = 0; pix < n_pixels; ++pix) {
            for (std::size_t ch = 0; ch < 3; ++ch) {
                behind_rgb[3 * pix + ch] = bg[static_cast<int>(ch)];
            }
        }
        std::vector<std::vector<double>> slots(c.bands_.size());

        parallel_for(c.bands_.size(), [&](std::size_t band_index) {
            const BlendCache::Band &band = c.bands_[band_index];
            std::vector<double> &acc = slots[band_index];
            acc.assign(static_cast<std::size_t>(kSlots) * band.segments.size(), 0.0);
            for (std::size_t s = band.segments.size(); s-- > 0;) {
                const std::uint32_t g = band.segments[s].gaussian;
                const std::size_t end = s + 1 < band.segments.size() ? band.segments[s + 1].begin : band.hits.size();
                const double mx = c.mean_[2 * g], my = c.mean_[2 * g + 1];
                const double qa = c.conic_[3 * g], qb = c.conic_[3 * g + 1], qc = c.conic_[3 * g + 2];
                const double base = c.alpha_[g];
                const double *col = &c.color_[3 * g];
                double *a = &acc[static_cast<std::size_t>(kSlots) * s];
                for (std::size_t k = band.segments[s].begin; k < end; ++k) {
                    const BlendCache::Hit &h = band.hits[k];
                    const std::size_t pix = h.pixel;
                    const double gr = dl_dcolor[3 * pix], gg = dl_dcolor[3 * pix + 1], gb = dl_dcolor[3 * pix + 2];
                    const double ga = dl_dalpha[pix];
                    double *sr = &behind_rgb[3 * pix];
                    double &sa = behind_a[pix];
                    const double dl_da =
                        h.t * (gr * (col[0] - sr[0]) + gg * (col[1] - sr[1]) + gb * (col[2] - sr[2]) + ga * (1.0 - sa));
                    const double wt = h.alpha * h.t;
                    a[kR] += gr * wt;
                    a[kG] += gg * wt;
                    a[kBlue] += gb * wt;
                    for (int ch = 0; ch < 3; ++ch) {
                        sr[ch] = col[ch] * h.alpha + (1.0 - h.alpha) * sr[ch];
                    }
                    sa = h.alpha + (1.0 - h.alpha) * sa;

                    const double dx = static_cast<double>(pix % static_cast<std::size_t>(width)) + 0.5 - mx;
                    const double dy = static_cast<double>(pix / static_cast<std::size_t>(width)) + 0.5 - my;
                    const double p = qa * dx * dx + 2.0 * qb * dx * dy + qc * dy * dy;
                    // alpha' = base * e * w; inside the flat part of the support w = 1.
                    double da_dbase, da_dp;
                    if (p <= 7.0) {
                        da_dbase = h.alpha / base;
                        da_dp = -0.5 * h.alpha;
                    } else {
                        const double e = std::exp(-0.5 * p);
                        const double w = support_weight(p);
                        da_dbase = e * w;
                        da_dp = base * e * (support_weight_derivative(p) - 0.5 * w);
                    }
                    a[kAlpha] += dl_da * da_dbase;
                    const double gp = dl_da * da_dp;
                    a[kU] += gp * (-2.0 * (qa * dx + qb * dy));
                    a[kV] += gp * (-2.0 * (qb * dx + qc * dy));
                    a[kA] += gp * dx * dx;
                    a[kB] += gp * 2.0 * dx * dy;
                    a[kC] += gp * dy * dy;
                }
            }
        });

        // Fixed-order merge so results do not depend on scheduling.
        std::vector<double> screen(static_cast<std::size_t>(kSlots) * n, 0.0);
        for (std::size_t b = 0; b < c.bands_.size(); ++b) {
            const auto &segments = c.bands_[b].segments;
            for (std::size_t s = 0; s < segments.size(); ++s) {
                const std::size_t g = segments[s].gaussian;
                for (std::size_t k = 0; k < kSlots; ++k) {
                    screen[kSlots * g + k] += slots[b][kSlots * s + k];
                }
            }
        }

        CloudGradients grads(n);
        const Mat3 w2c = c.pose_.world_to_camera_rotation();
        const double f = c.intr_.focal();
        parallel_for(n, [&](std::size_t i) {
            if (!c.visible_[i]) {
                return;
            }
            const double *sg = &screen[kSlots * i];
            const Projection p = project(cloud, i, c.intr_, w2c, c.pose_.position);
            grads.visible[i] = 1;
            grads.mean2d_norm[i] = std::hypot(sg[kU] * 0.5 * width, sg[kV] * 0.5 * height);

            const double alpha = c.alpha_[i];
            grads.opacity_logits[i] = sg[kAlpha] * alpha * (1.0 - alpha);
            grads.colors[3 * i] = sg[kR];
            grads.colors[3 * i + 1] = sg[kG];
            grads.colors[3 * i + 2] = sg[kBlue];

            // conic -> 2D covariance -> (camera covariance, Jacobian)
            Mat2 g_conic;
            g_conic << sg[kA], 0.5 * sg[kB], 0.5 * sg[kB], sg[kC];
            const Mat2 g_cov = -p.conic * g_conic * p.conic;
            const Mat3 g_m = p.jac.transpose() * g_cov * p.jac;
            const Eigen::Matrix<double, 2, 3> g_j = 2.0 * g_cov * p.jac * p.m;
            const Mat3 g_sigma = w2c.transpose() * g_m * w2c;

            const double tx = p.t.x(), ty = p.t.y(), tz = p.t.z();
            const double tz2 = tz * tz, tz3 = tz2 * tz;
            Vec3 g_t;
            g_t.x() = -f / tz * sg[kU] + g_j(0, 2) * f / tz2;
            g_t.y() = f / tz * sg[kV] - g_j(1, 2) * f / tz2;
            g_t.z() = f * tx / tz2 * sg[kU] - f * ty / tz2 * sg[kV] + g_j(0, 0) * f / tz2 -
                      g_j(0, 2) * 2.0 * f * tx / tz3 - g_j(1, 1) * f / tz2 + g_j(1, 2) * 2.0 * f * ty / tz3;
            const Vec3 g_mu = w2c.transpose() * g_t;
            for (int k = 0; k < 3; ++k) {
                grads.positions[3 * i + static_cast<std::size_t>(k)] = g_mu[k];
            }

            // Sigma = R diag(s^2) R^T
            for (int k = 0; k < 3; ++k) {
                const Vec3 r = p.rot.col(k);
                grads.log_scales[3 * i + static_cast<std::size_t>(k)] = 2.0 * p.scale2[k] * r.dot(g_sigma * r);
            }
            const Mat3 g_r = 2.0 * g_sigma * p.rot * p.scale2.asDiagonal();
            const double *raw = &cloud.rotations[4 * i];
            const double qn = std::sqrt(raw[0] * raw[0] + raw[1] * raw[1] + raw[2] * raw[2] + raw[3] * raw[3]);
            const double w = raw[0] / qn, x = raw[1] / qn, y = raw[2] / qn, z = raw[3] / qn;
            const Mat3 &G = g_r;
            Vec4 g_hat;
            g_hat[0] = 2.0 * (-z * G(0, 1) + y * G(0, 2) + z * G(1, 0) - x * G(1, 2) - y * G(2, 0) + x * G(2, 1));
            g_hat[1] = 2.0 * (y * G(0, 1) + z * G(0, 2) + y * G(1, 0) - 2.0 * x * G(1, 1) - w * G(1, 2) +
                              z * G(2, 0) + w * G(2, 1) - 2.0 * x * G(2, 2));
            g_hat[2] = 2.0 * (-2.0 * y * G(0, 0) + x * G(0, 1) + w * G(0, 2) + x * G(1, 0) + z * G(1, 2) -
                              w * G(2, 0) + z * G(2, 1) - 2.0 * y * G(2, 2));
            g_hat[3] = 2.0 * (-2.0 * z * G(0, 0) - w * G(0, 1) + x * G(0, 2) + w * G(1, 0) - 2.0 * z * G(1, 1) +
                              y * G(1, 2) + x * G(2, 0) + y * G(2, 1));
            const Vec4 q_hat(w, x, y, z);
            const Vec4 g_q = (g_hat - q_hat * q_hat.dot(g_hat)) / qn;
            for (int k = 0; k < 4; ++k) {
                grads.rotations[4 * i + static_cast<std::size_t>(k)] = g_q[k];
            }
        });
        return grads;
    }
};

std::vector<Contributor> BlendCache::contributors(int x, int y) const {
    return SplatRasterizer::contributors(*this, x, y);
}

double BlendCache::final_transmittance(int x, int y) const {
    if (x < 0 || y < 0 || x >= intr_.width || y >= intr_.height) {
        throw InvalidArgument("final_transmittance: pixel outside the image");
    }
    return final_t_[static_cast<std::size_t>(y) * intr_.width + x];
}

RenderOutput render(const GaussianCloud &cloud, const CameraIntrinsics &intr, const CameraPose &pose,
                    const Vec3 &background_rgb) {
    return SplatRasterizer::forward(cloud, intr, pose, background_rgb);
}

CloudGradients render_backward(const GaussianCloud &cloud, const RenderOutput &out,
                               std::span<const double> dl_dcolor, std::span<const double> dl_dalpha) {
    return SplatRasterizer::backward(cloud, out, dl_dcolor, dl_dalpha);
}

// ---- serialization ----

namespace {

constexpr char kMagic[4] = {'O', 'S', 'G', 'C'};
constexpr std::uint32_t kVersion = 1;
constexpr int kFieldsPerGaussian = 14;

void put_u32(std::ostream &os, std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) {
        b[i] = static_cast<char>((v >> (8 * i)) & 0xffU);
    }
    os.write(b, 4);
}

void put_u64(std::ostream &os, std::uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) {
        b[i] = static_cast<char>((v >> (8 * i)) & 0xffU);
    }
    os.write(b, 8);
}

std::uint64_t get_le(std::istream &is, int bytes) {
    unsigned char b[8] = {};
    if (!is.read(reinterpret_cast<char *>(b), bytes)) {
        throw IoError("truncated gaussian cloud stream");
    }
    std::uint64_t v = 0;
    for (int i = bytes - 1; i >= 0; --i) {
        v = (v << 8) | b[i];
    }
    return v;
}

std::array<double, kFieldsPerGaussian> record(const GaussianCloud &c, std::size_t i) {
    return {c.positions[3 * i],     c.positions[3 * i + 1],  c.positions[3 * i + 2],  c.log_scales[3 * i],
            c.log_scales[3 * i + 1], c.log_scales[3 * i + 2], c.rotations[4 * i],      c.rotations[4 * i + 1],
            c.rotations[4 * i + 2],  c.rotations[4 * i + 3],  c.opacity_logits[i],     c.colors[3 * i],
            c.colors[3 * i + 1],     c.colors[3 * i + 2]};
}

void append_record(GaussianCloud &c, const std::array<double, kFieldsPerGaussian> &r) {
    Gaussian3D g;
    g.position = Vec3(r[0], r[1], r[2]);
    g.log_scale = Vec3(r[3], r[4], r[5]);
    g.rotation = Vec4(r[6], r[7], r[8], r[9]);
    g.opacity_logit = r[10];
    g.color = Vec3(r[11], r[12], r[13]);
    c.push_back(g);
}

} // namespace

void write_cloud_binary(const GaussianCloud &cloud, std::ostream &os) {
    cloud.validate();
    os.write(kMagic, 4);
    put_u32(os, kVersion);
    put_u64(os, cloud.size());
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        for (double v : record(cloud, i)) {
            put_u32(os, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
        }
    }
    if (!os) {
        throw IoError("failed writing gaussian cloud");
    }
}

GaussianCloud read_cloud_binary(std::istream &is) {
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
        throw IoError("not a gaussian cloud file (bad magic)");
    }
    const auto version = static_cast<std::uint32_t>(get_le(is, 4));
    if (version != kVersion) {
        throw IoError("unsupported gaussian cloud version " + std::to_string(version));
    }
    const std::uint64_t n = get_le(is, 8);
    GaussianCloud cloud;
    for (std::uint64_t i = 0; i < n; ++i) {
        std::array<double, kFieldsPerGaussian> r{};
        for (double &v : r) {
            v = std::bit_cast<float>(static_cast<std::uint32_t>(get_le(is, 4)));
        }
        append_record(cloud, r);
    }
    cloud.validate();
    return cloud;
}

void save_cloud(const GaussianCloud &cloud, const std::filesystem::path &path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) {
        throw IoError("cannot write '" + path.string() + "'");
    }
    write_cloud_binary(cloud, f);
}

GaussianCloud load_cloud(const std::filesystem::path &path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw IoError("cannot read '" + path.string() + "'");
    }
    return read_cloud_binary(f);
}

void write_cloud_text(const GaussianCloud &cloud, std::ostream &os) {
    cloud.validate();
    os << "# x y z log_sx log_sy log_sz qw qx qy qz opacity_logit r g b\n";
    char buf[32];
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const auto r = record(cloud, i);
        for (int k = 0; k < kFieldsPerGaussian; ++k) {
            std::snprintf(buf, sizeof(buf), "%.9g", r[static_cast<std::size_t>(k)]);
            os << (k ? " " : "") << buf;
        }
        os << '\n';
    }
}

GaussianCloud read_cloud_text(std::istream &is) {
    GaussianCloud cloud;
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#') {
            continue;
        }
        std::istringstream ss(line);
        std::array<double, kFieldsPerGaussian> r{};
        for (double &v : r) {
            if (!(ss >> v)) {
                throw ParseError(line_no, "gaussian", "expected 14 numbers");
            }
        }
        std::string extra;
        if (ss >> extra) {
            throw ParseError(line_no, "gaussian", "trailing data '" + extra + "'");
        }
        append_record(cloud, r);
    }
    cloud.validate();
    return cloud;
}

} // namespace orbitalsplat
