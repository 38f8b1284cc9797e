// Copyright Contributors to the OrbitalSplat Project
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include "orbitalsplat/gaussians.hpp"
#include "orbitalsplat/geometry.hpp"
#include "orbitalsplat/mesh.hpp"

#include <array>
#include <filesystem>
#include <vector>

namespace orbitalsplat {

struct Bounds {
    Vec3 min = Vec3::Constant(-1.0);
    Vec3 max = Vec3::Constant(1.0);

    /// Throws InvalidArgument unless max > min on every axis and both are finite.
    void validate() const;
};

/// Samples on the cell-corner lattice spanning `bounds`, x fastest.
struct DensityGrid {
    std::array<int, 3> resolution{2, 2, 2};
    Bounds bounds;
    std::vector<double> values;

    DensityGrid() = default;
    DensityGrid(std::array<int, 3> res, const Bounds &b);

    void validate() const;
    Vec3 spacing() const;
    Vec3 point(int i, int j, int k) const;
    std::size_t index(int i, int j, int k) const {
        return static_cast<std::size_t>(i) +
               static_cast<std::size_t>(resolution[0]) *
                   (static_cast<std::size_t>(j) + static_cast<std::size_t>(resolution[1]) * k);
    }
    double at(int i, int j, int k) const { return values[index(i, j, k)]; }
};

/// Squared Mahalanobis distance beyond which a Gaussian contributes nothing (3 sigma).
inline constexpr double kDensityCutoff = 9.0;

/// sum_i alpha_i exp(-m_i / 2), m_i the squared Mahalanobis distance to Gaussian i. Terms with
/// m_i > 9 are dropped unless `truncate` is false.
double density_at(const GaussianCloud &cloud, const Vec3 &x, bool truncate = true);

/// density_at on every lattice point. Gaussians are binned into 16^3-sample blocks by their
/// 3 sigma box, so each sample only visits Gaussians that can reach it.
DensityGrid sample_grid(const GaussianCloud &cloud, std::array<int, 3> resolution, const Bounds &bounds);

/// Box around the Gaussian centers grown by 3 times the largest scale in the cloud.
Bounds default_bounds(const GaussianCloud &cloud);

/// Triangulates {density = iso} with normals pointing toward lower density. Vertices on shared
/// lattice edges are emitted once. Returns an empty mesh when no cell straddles iso.
Mesh marching_cubes(const DensityGrid &grid, double iso);

struct TexturedMesh {
    Mesh mesh;
    TextureImage texture;
};

struct BakeView {
    CameraIntrinsics intr;
    CameraPose pose;
};

/// Depth tolerance of the bake occlusion test, scene units.
inline constexpr double kBakeDepthTolerance = 0.01;

/// Gives every triangle its own chart in a square atlas (one grid cell per triangle) and fills
/// each texel with the average splat color seen from `views`, weighted by max(0, n.v)^2.
/// Points lying behind the splat depth map are skipped. Texels no view saw take the value of
/// the nearest texel that was seen.
TexturedMesh bake_texture(const GaussianCloud &cloud, const Mesh &mesh, const std::vector<BakeView> &views,
                          int atlas_size);

/// Writes `<stem>.obj`, `<stem>.mtl` and `<stem>.png`.
void save_textured_mesh(const TexturedMesh &tm, const std::filesystem::path &dir, const std::string &stem);

} // namespace orbitalsplat
