// Copyright Contributors to the OrbitalSplat Project
// SPDX-License-Identifier: Apache-2.0
//
#include "orbitalsplat/error.hpp"
#include "orbitalsplat/gaussians.hpp"
#include "orbitalsplat/parallel.hpp"

#include "splat_oracles.hpp"

#include <Eigen/Eigenvalues>
#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

using namespace orbitalsplat;

namespace {

CameraIntrinsics small_intr(int size) {
    CameraIntrinsics intr;
    intr.width = size;
    intr.height = size;
    return intr;
}

Gaussian3D isotropic(const Vec3 &pos, double scale, double alpha, const Vec3 &color) {
    Gaussian3D g;
    g.position = pos;
    g.log_scale = Vec3::Constant(std::log(scale));
    g.opacity_logit = logit(alpha);
    g.color = color;
    return g;
}

double max_abs_diff(const ImageRGBA &a, const ImageRGBA &b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.data().size(); ++i) {
        m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
    }
    return m;
}

} // namespace

TEST(Covariance, IdentityRotationUnitScale) {
    Gaussian3D g;
    EXPECT_TRUE(covariance3d(g).isApprox(Mat3::Identity(), 1e-15));
}

TEST(Covariance, ScaleIsSquared) {
    Gaussian3D g;
    g.log_scale = Vec3(std::log(2.0), 0.0, 0.0);
    const Mat3 expected = Vec3(4.0, 1.0, 1.0).asDiagonal();
    EXPECT_LT((covariance3d(g) - expected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Covariance, RotationConjugates) {
    Gaussian3D g;
    g.log_scale = Vec3(std::log(2.0), 0.0, 0.0);
    const double h = std::numbers::pi / 4.0;
    g.rotation = Vec4(std::cos(h), 0.0, 0.0, std::sin(h));
    const Mat3 expected = Vec3(1.0, 4.0, 1.0).asDiagonal();
    EXPECT_LT((covariance3d(g) - expected).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Covariance, UnnormalizedQuaternionIsNormalized) {
    Gaussian3D a;
    a.log_scale = Vec3(0.1, -0.4, 0.7);
    a.rotation = Vec4(0.3, -0.2, 0.5, 0.4);
    Gaussian3D b = a;
    b.rotation *= 7.5;
    EXPECT_LT((covariance3d(a) - covariance3d(b)).cwiseAbs().maxCoeff(), 1e-12);
    const Mat3 s = covariance3d(a);
    EXPECT_LT((s - s.transpose()).cwiseAbs().maxCoeff(), 1e-9);
    Eigen::SelfAdjointEigenSolver<Mat3> es(s);
    EXPECT_GT(es.eigenvalues().minCoeff(), 0.0);
}

TEST(Projection, OnAxisIsotropicMatchesPinholeJacobian) {
    const CameraIntrinsics intr = small_intr(256);
    const CameraPose pose = look_at(Vec3(0, 0, 2), Vec3::Zero(), Vec3::UnitY());
    const double s = 0.05;
    const auto p = project_gaussian(isotropic(Vec3::Zero(), s, 0.5, Vec3::Ones()), intr, pose);
    ASSERT_TRUE(p.has_value());
    const double expected = std::pow(intr.focal() * s / 2.0, 2);
    EXPECT_NEAR(p->cov(0, 0), expected, 0.01 * expected);
    EXPECT_NEAR(p->cov(1, 1), expected, 0.01 * expected);
    EXPECT_NEAR(p->cov(0, 1), 0.0, 1e-9);
    EXPECT_NEAR(p->mean.x(), 128.0, 1e-9);
    EXPECT_NEAR(p->mean.y(), 128.0, 1e-9);
    EXPECT_NEAR(p->depth, 2.0, 1e-12);
}

TEST(Projection, DoublingDepthQuartersCovariance) {
    const CameraIntrinsics intr = small_intr(512);
    const Gaussian3D g = isotropic(Vec3::Zero(), 0.1, 0.5, Vec3::Ones());
    const auto near = project_gaussian(g, intr, look_at(Vec3(0, 0, 2), Vec3::Zero(), Vec3::UnitY()));
    const auto far = project_gaussian(g, intr, look_at(Vec3(0, 0, 4), Vec3::Zero(), Vec3::UnitY()));
    ASSERT_TRUE(near && far);
    const double ratio = (far->cov(0, 0) - kCovarianceLowPass) / (near->cov(0, 0) - kCovarianceLowPass);
    EXPECT_NEAR(ratio, 0.25, 0.0025);
}

TEST(Projection, MeanMatchesProjectPointAndFloorHolds) {
    const CameraIntrinsics intr = small_intr(200);
    const CameraPose pose = look_at(Vec3(1.2, -0.7, 1.5), Vec3(0.1, 0.0, 0.0), Vec3::UnitZ());
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-0.4, 0.4);
    for (int i = 0; i < 50; ++i) {
        Gaussian3D g;
        g.position = Vec3(u(rng), u(rng), u(rng));
        g.log_scale = Vec3(u(rng), u(rng), u(rng)) * 5.0 - Vec3::Constant(4.0);
        g.rotation = Vec4(u(rng), u(rng), u(rng), u(rng)) + Vec4(0.5, 0, 0, 0);
        const auto p = project_gaussian(g, intr, pose);
        ASSERT_TRUE(p.has_value());
        const PixelProjection pp = project_point(intr, pose, g.position);
        EXPECT_NEAR(p->mean.x(), pp.u, 1e-9);
        EXPECT_NEAR(p->mean.y(), pp.v, 1e-9);
        EXPECT_NEAR(p->cov(0, 1), p->cov(1, 0), 1e-12);
        Eigen::SelfAdjointEigenSolver<Mat2> es(p->cov);
        EXPECT_GE(es.eigenvalues().minCoeff(), kCovarianceLowPass - 1e-9);
    }
}

TEST(Projection, BehindCameraIsSkipped) {
    const CameraIntrinsics intr = small_intr(64);
    const CameraPose pose = look_at(Vec3(0, 0, 2), Vec3::Zero(), Vec3::UnitY());
    EXPECT_FALSE(project_gaussian(isotropic(Vec3(0, 0, 3), 0.1, 0.5, Vec3::Ones()), intr, pose).has_value());
    GaussianCloud cloud;
    cloud.push_back(isotropic(Vec3(0, 0, 3), 0.1, 0.9, Vec3::Zero()));
    const RenderOutput out = render(cloud, intr, pose, Vec3::Ones());
    EXPECT_EQ(out.color.at(32, 32, 3), 0.0);
}

TEST(SupportWeight, SmoothEdge) {
    EXPECT_EQ(support_weight(0.0), 1.0);
    EXPECT_EQ(support_weight(7.0), 1.0);
    EXPECT_EQ(support_weight(9.0), 0.0);
    EXPECT_NEAR(support_weight(8.0), 0.5, 1e-15);
    for (double p = 6.9; p < 9.1; p += 0.013) {
        const double fd = (support_weight(p + 1e-6) - support_weight(p - 1e-6)) / 2e-6;
        EXPECT_NEAR(support_weight_derivative(p), fd, 1e-6) << p;
    }
}

TEST(Render, EmptyCloudIsBackground) {
    const RenderOutput out = render(GaussianCloud{}, small_intr(16), look_at(Vec3(0, 0, 2), Vec3::Zero(), Vec3::UnitY()),
                                    Vec3(0.2, 0.4, 0.6));
    for (int y = 0; y < 16; ++y) {
        for (int x = 0; x < 16; ++x) {
            EXPECT_EQ(out.color.at(x, y, 0), 0.2);
            EXPECT_EQ(out.color.at(x, y, 1), 0.4);
            EXPECT_EQ(out.color.at(x, y, 2), 0.6);
            EXPECT_EQ(out.color.at(x, y, 3), 0.0);
            EXPECT_TRUE(std::isinf(out.depth[static_cast<std::size_t>(y * 16 + x)]));
        }
    }
}

TEST(Render, CenterPixelAlphaEqualsOpacity) {
    // Even image size puts the projected center between pixels; use an odd size so a pixel
    // center coincides with it.
    const CameraIntrinsics intr = small_intr(65);
    const CameraPose pose = look_at(Vec3(0, 0, 2), Vec3::Zero(), Vec3::UnitY());
    GaussianCloud cloud;
    cloud.push_back(isotropic(Vec3::Zero(), 0.05, 0.6, Vec3(1, 0, 0)));
    const RenderOutput out = render(cloud, intr, pose, Vec3::Ones());
    EXPECT_NEAR(out.color.at(32, 32, 3), 0.6, 1e-3);
    EXPECT_NEAR(out.depth[32 * 65 + 32], 2.0, 1e-12);
}

TEST(Render, FrontGaussianOccludes) {
    const CameraIntrinsics intr = small_intr(65);
    const CameraPose pose = look_at(Vec3(0, 0, 3), Vec3::Zero(), Vec3::UnitY());
    GaussianCloud cloud;
    cloud.push_back(isotropic(Vec3(0, 0, 1.1), 0.1, 0.9999, Vec3(0, 0, 1))); // depth 1.9
    cloud.push_back(isotropic(Vec3(0, 0, 1.5), 0.1, 0.9999, Vec3(1, 0, 0))); // depth 1.5
    const RenderOutput out = render(cloud, intr, pose, Vec3::Ones());
    EXPECT_NEAR(out.color.at(32, 32, 0), 1.0, 1e-2);
    EXPECT_NEAR(out.color.at(32, 32, 1), 0.0, 1e-2);
    EXPECT_NEAR(out.color.at(32, 32, 2), 0.0, 1e-2);
}

TEST(Render, MatchesNaiveFullSortReference) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const test::SplatScene scene = test::random_scene(seed, 1 + static_cast<int>(seed % 5), 40);
        const RenderOutput out = render(scene.cloud, scene.intr, scene.pose, scene.background);
        const ImageRGBA ref = test::naive_render(scene.cloud, scene.intr, scene.pose, scene.background);
        EXPECT_LT(max_abs_diff(out.color, ref), 1e-6) << "seed " << seed;
    }
}

TEST(Render, ManyGaussiansMatchNaiveReference) {
    // Exercises tile binning with supports crossing tile borders and early termination.
    const test::SplatScene scene = test::random_scene(99, 60, 70, 0.95);
    const RenderOutput out = render(scene.cloud, scene.intr, scene.pose, scene.background);
    const ImageRGBA ref = test::naive_render(scene.cloud, scene.intr, scene.pose, scene.background);
    EXPECT_LT(max_abs_diff(out.color, ref), 1e-6);
}

TEST(Render, TransparentGaussianChangesNothing) {
    const test::SplatScene scene = test::random_scene(7, 4, 48);
    const RenderOutput before = render(scene.cloud, scene.intr, scene.pose, scene.background);
    GaussianCloud more = scene.cloud;
    Gaussian3D ghost = isotropic(Vec3(0.05, 0.0, 0.3), 0.3, 0.5, Vec3(1, 0, 1));
    ghost.opacity_logit = -30.0;
    more.push_back(ghost);
    const RenderOutput after = render(more, scene.intr, scene.pose, scene.background);
    EXPECT_LT(max_abs_diff(before.color, after.color), 1e-6);
}

TEST(Render, InputOrderDoesNotMatter) {
    const test::SplatScene scene = test::random_scene(11, 12, 48);
    GaussianCloud shuffled;
    std::vector<std::size_t> idx(scene.cloud.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 rng(5);
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t i : idx) {
        shuffled.push_back(scene.cloud.get(i));
    }
    const RenderOutput a = render(scene.cloud, scene.intr, scene.pose, scene.background);
    const RenderOutput b = render(shuffled, scene.intr, scene.pose, scene.background);
    EXPECT_LT(max_abs_diff(a.color, b.color), 1e-6);
}

TEST(Render, AlphaMonotoneInOpacity) {
    const test::SplatScene scene = test::random_scene(13, 5, 40);
    for (std::size_t g = 0; g < scene.cloud.size(); ++g) {
        GaussianCloud more = scene.cloud;
        more.opacity_logits[g] += 0.05;
        const RenderOutput a = render(scene.cloud, scene.intr, scene.pose, scene.background);
        const RenderOutput b = render(more, scene.intr, scene.pose, scene.background);
        for (int y = 0; y < 40; ++y) {
            for (int x = 0; x < 40; ++x) {
                EXPECT_GE(b.color.at(x, y, 3), a.color.at(x, y, 3) - 1e-15);
            }
        }
    }
}

TEST(Render, ContributorsSortedWithDecreasingTransmittance) {
    const test::SplatScene scene = test::random_scene(17, 30, 48, 0.9);
    const RenderOutput out = render(scene.cloud, scene.intr, scene.pose, scene.background);
    std::vector<double> depth(scene.cloud.size());
    for (std::size_t i = 0; i < depth.size(); ++i) {
        depth[i] = -scene.pose.to_camera(scene.cloud.get(i).position).z();
    }
    std::size_t nonempty = 0;
    for (int y = 0; y < 48; ++y) {
        for (int x = 0; x < 48; ++x) {
            const auto list = out.cache.contributors(x, y);
            nonempty += list.empty() ? 0 : 1;
            double alpha = 0.0, t = 1.0;
            for (std::size_t k = 0; k < list.size(); ++k) {
                EXPECT_EQ(list[k].transmittance, t);
                if (k > 0) {
                    EXPECT_LT(list[k].transmittance, list[k - 1].transmittance);
                    const auto a = list[k - 1].index, b = list[k].index;
                    EXPECT_TRUE(depth[a] < depth[b] || (depth[a] == depth[b] && a < b));
                }
                t *= 1.0 - list[k].alpha;
            }
            alpha = 1.0 - t;
            EXPECT_NEAR(out.color.at(x, y, 3), alpha, 1e-15);
            EXPECT_GE(out.color.at(x, y, 3), 0.0);
            EXPECT_LE(out.color.at(x, y, 3), 1.0);
            EXPECT_EQ(out.cache.final_transmittance(x, y), t);
        }
    }
    EXPECT_GT(nonempty, 100u);
}

TEST(Render, StopsBelowMinimumTransmittance) {
    const CameraIntrinsics intr = small_intr(33);
    const CameraPose pose = look_at(Vec3(0, 0, 3), Vec3::Zero(), Vec3::UnitY());
    GaussianCloud cloud;
    for (int i = 0; i < 8; ++i) {
        cloud.push_back(isotropic(Vec3(0, 0, 0.1 * i), 0.2, 0.92, Vec3(0.1 * i, 0, 0)));
    }
    const RenderOutput out = render(cloud, intr, pose, Vec3::Ones());
    const auto list = out.cache.contributors(16, 16);
    ASSERT_EQ(list.size(), 4u); // 0.08^3 > 1e-4 > 0.08^4
    EXPECT_LT(out.cache.final_transmittance(16, 16), kMinTransmittance);
}

TEST(Backward, ZeroUpstreamGivesZeroGradients) {
    const test::SplatScene scene = test::random_scene(21, 3, 32);
    const RenderOutput out = render(scene.cloud, scene.intr, scene.pose, scene.background);
    const std::vector<double> gc(32 * 32 * 3, 0.0), ga(32 * 32, 0.0);
    EXPECT_TRUE(render_backward(scene.cloud, out, gc, ga).all_zero());
}

TEST(Backward, ColorGradientIsWeightAtCenter) {
    const CameraIntrinsics intr = small_intr(33);
    const CameraPose pose = look_at(Vec3(0, 0, 2), Vec3::Zero(), Vec3::UnitY());
    GaussianCloud cloud;
    cloud.push_back(isotropic(Vec3(0.01, -0.02, 0.0), 0.05, 0.7, Vec3(0.3, 0.6, 0.2)));
    const RenderOutput out = render(cloud, intr, pose, Vec3::Ones());
    std::vector<double> gc(33 * 33 * 3, 0.0), ga(33 * 33, 0.0);
    gc[(16 * 33 + 16) * 3] = 1.0;
    const CloudGradients g = render_backward(cloud, out, gc, ga);
    const auto list = out.cache.contributors(16, 16);
    ASSERT_EQ(list.size(), 1u);
    EXPECT_NEAR(g.colors[0], list[0].alpha, 1e-6);
    EXPECT_EQ(g.colors[1], 0.0);
}

TEST(Backward, NonContributingGaussianHasZeroGradient) {
    const test::SplatScene scene = test::random_scene(23, 3, 32);
    GaussianCloud cloud = scene.cloud;
    cloud.push_back(isotropic(Vec3(0, 0, 10), 0.1, 0.5, Vec3::Ones())); // behind the camera
    const RenderOutput out = render(cloud, scene.intr, scene.pose, scene.background);
    std::vector<double> gc(32 * 32 * 3, 1.0), ga(32 * 32, 1.0);
    const CloudGradients g = render_backward(cloud, out, gc, ga);
    const std::size_t last = cloud.size() - 1;
    EXPECT_EQ(g.opacity_logits[last], 0.0);
    EXPECT_EQ(g.visible[last], 0);
    for (int k = 0; k < 3; ++k) {
        EXPECT_EQ(g.positions[3 * last + static_cast<std::size_t>(k)], 0.0);
    }
}

TEST(Backward, MismatchedCacheIsRejected) {
    const test::SplatScene scene = test::random_scene(25, 3, 32);
    const RenderOutput out = render(scene.cloud, scene.intr, scene.pose, scene.background);
    GaussianCloud other = scene.cloud;
    other.colors[0] += 0.01;
    std::vector<double> gc(32 * 32 * 3, 1.0), ga(32 * 32, 1.0);
    EXPECT_THROW(render_backward(other, out, gc, ga), InvalidArgument);
    std::vector<double> short_gc(10, 0.0);
    EXPECT_THROW(render_backward(scene.cloud, out, short_gc, ga), InvalidArgument);
}

TEST(Backward, MatchesFiniteDifferencesAcrossSeeds) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const test::GradientCheck check = test::check_gradients(seed);
        EXPECT_GT(check.checked, 20) << "seed " << seed;
        EXPECT_LT(check.max_rel_error, 1e-3) << "seed " << seed << " worst " << check.worst;
    }
}

TEST(Backward, DeterministicAcrossWorkerCounts) {
    const test::SplatScene scene = test::random_scene(31, 40, 64, 0.9);
    const RenderOutput out = render(scene.cloud, scene.intr, scene.pose, scene.background);
    std::vector<double> gc(64 * 64 * 3), ga(64 * 64);
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(-1, 1);
    for (double &v : gc) {
        v = u(rng);
    }
    for (double &v : ga) {
        v = u(rng);
    }
    set_max_jobs(1);
    const CloudGradients a = render_backward(scene.cloud, out, gc, ga);
    set_max_jobs(4);
    const CloudGradients b = render_backward(scene.cloud, out, gc, ga);
    set_max_jobs(0);
    EXPECT_EQ(a.positions, b.positions);
    EXPECT_EQ(a.rotations, b.rotations);
    EXPECT_EQ(a.log_scales, b.log_scales);
}

TEST(CloudIo, BinaryRoundTripIsFloat32Exact) {
    const test::SplatScene scene = test::random_scene(41, 20, 16);
    std::stringstream ss;
    write_cloud_binary(scene.cloud, ss);
    EXPECT_EQ(ss.str().size(), 16u + 20u * 14u * 4u);
    EXPECT_EQ(ss.str().substr(0, 4), "OSGC");
    const GaussianCloud back = read_cloud_binary(ss);
    ASSERT_EQ(back.size(), 20u);
    for (std::size_t i = 0; i < back.positions.size(); ++i) {
        EXPECT_EQ(back.positions[i], static_cast<double>(static_cast<float>(scene.cloud.positions[i])));
    }
    std::stringstream again;
    write_cloud_binary(back, again);
    EXPECT_EQ(again.str(), [&] {
        std::stringstream s;
        write_cloud_binary(scene.cloud, s);
        return s.str();
    }());
}

TEST(CloudIo, TextMatchesBinaryFieldOrder) {
    GaussianCloud cloud;
    Gaussian3D g;
    g.position = Vec3(1, 2, 3);
    g.log_scale = Vec3(-1, -2, -3);
    g.rotation = Vec4(1, 0, 0, 0);
    g.opacity_logit = 0.25;
    g.color = Vec3(0.5, 0.25, 0.125);
    cloud.push_back(g);
    std::stringstream ss;
    write_cloud_text(cloud, ss);
    EXPECT_NE(ss.str().find("1 2 3 -1 -2 -3 1 0 0 0 0.25 0.5 0.25 0.125"), std::string::npos);
    const GaussianCloud back = read_cloud_text(ss);
    EXPECT_EQ(back.fingerprint(), cloud.fingerprint());
}

TEST(CloudIo, RejectsBadInput) {
    std::stringstream bad("NOPE");
    EXPECT_THROW(read_cloud_binary(bad), IoError);
    std::stringstream truncated;
    truncated.write("OSGC\x01\0\0\0\x05\0\0\0\0\0\0\0", 16);
    EXPECT_THROW(read_cloud_binary(truncated), IoError);
    std::stringstream text("1 2 3\n");
    EXPECT_THROW(read_cloud_text(text), ParseError);
}

TEST(Cloud, ClampsRestoreInvariants) {
    GaussianCloud cloud;
    Gaussian3D g;
    g.log_scale = Vec3(-40, 0, 40);
    g.opacity_logit = 100;
    g.color = Vec3(-1, 0.5, 2);
    g.rotation = Vec4(2, 0, 0, 0);
    cloud.push_back(g);
    cloud.apply_clamps();
    const Gaussian3D c = cloud.get(0);
    EXPECT_GT(std::exp(c.log_scale[0]), 1e-7);
    EXPECT_LT(std::exp(c.log_scale[2]), 1e2);
    EXPECT_LT(c.opacity(), 1.0);
    EXPECT_EQ(c.color, Vec3(0, 0.5, 1));
    EXPECT_EQ(c.rotation, Vec4(1, 0, 0, 0));
}
