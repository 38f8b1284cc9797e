// Copyright Contributors to the OrbitalSplat Project
// SPDX-License-Identifier: Apache-2.0
//
#include "orbitalsplat/meshextract.hpp"

#include "orbitalsplat/error.hpp"
#include "orbitalsplat/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <unordered_map>

namespace orbitalsplat {

namespace {

#include "mc_tables.inc"

struct PreparedGaussian {
    Vec3 mean;
    Mat3 inv_cov;
    double alpha;
    Vec3 half_extent; // of the 3 sigma box
};

PreparedGaussian prepare(const GaussianCloud &cloud, std::size_t i) {
    const Gaussian3D g = cloud.get(i);
    const Mat3 r = quaternion_rotation(g.rotation);
    const Vec3 inv_s2 = (-2.0 * g.log_scale.array()).exp();
    const Vec3 s2 = (2.0 * g.log_scale.array()).exp();
    PreparedGaussian p;
    p.mean = g.position;
    p.inv_cov = r * inv_s2.asDiagonal() * r.transpose();
    p.alpha = g.opacity();
    const Mat3 cov = r * s2.asDiagonal() * r.transpose();
    p.half_extent = 3.0 * cov.diagonal().cwiseMax(0.0).cwiseSqrt();
    return p;
}

double term(const PreparedGaussian &g, const Vec3 &x, bool truncate) {
    const Vec3 d = x - g.mean;
    const double m = d.dot(g.inv_cov * d);
    if (truncate && m > kDensityCutoff) {
        return 0.0;
    }
    return g.alpha * std::exp(-0.5 * m);
}

constexpr int kBlock = 16;

// Bourke corner k -> lattice offset.
constexpr int kCorner[8][3] = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
                               {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}};
// Edge k -> (corner with the lower coordinate, axis).
constexpr int kEdge[12][2] = {{0, 0}, {1, 1}, {3, 0}, {0, 1}, {4, 0}, {5, 1},
                              {7, 0}, {4, 1}, {0, 2}, {1, 2}, {2, 2}, {3, 2}};

} // namespace

void Bounds::validate() const {
    if (!min.allFinite() || !max.allFinite() || !(max.array() > min.array()).all()) {
        throw InvalidArgument("bounds must be finite with max > min on every axis");
    }
}

DensityGrid::DensityGrid(std::array<int, 3> res, const Bounds &b) : resolution(res), bounds(b) {
    for (int r : resolution) {
        if (r < 2) {
            throw InvalidArgument("density grid resolution must be >= 2 per axis");
        }
    }
    bounds.validate();
    values.assign(static_cast<std::size_t>(res[0]) * res[1] * res[2], 0.0);
}

void DensityGrid::validate() const {
    for (int r : resolution) {
        if (r < 2) {
            throw InvalidArgument("density grid resolution must be >= 2 per axis");
        }
    }
    bounds.validate();
    if (values.size() != static_cast<std::size_t>(resolution[0]) * resolution[1] * resolution[2]) {
        throw InvalidArgument("density grid: value count does not match the resolution");
    }
    for (double v : values) {
        if (!std::isfinite(v)) {
            throw InvalidArgument("density grid: non-finite value");
        }
    }
}

Vec3 DensityGrid::spacing() const {
    return (bounds.max - bounds.min).cwiseQuotient(
        Vec3(resolution[0] - 1, resolution[1] - 1, resolution[2] - 1));
}

Vec3 DensityGrid::point(int i, int j, int k) const {
    const Vec3 h = spacing();
    return bounds.min + Vec3(i * h.x(), j * h.y(), k * h.z());
}

double density_at(const GaussianCloud &cloud, const Vec3 &x, bool truncate) {
    double sum = 0.0;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        sum += term(prepare(cloud, i), x, truncate);
    }
    return sum;
}

DensityGrid sample_grid(const GaussianCloud &cloud, std::array<int, 3> resolution, const Bounds &bounds) {
    DensityGrid grid(resolution, bounds);
    cloud.validate();
    std::vector<PreparedGaussian> gs(cloud.size());
    parallel_for(gs.size(), [&](std::size_t i) { gs[i] = prepare(cloud, i); });

    std::array<int, 3> nb;
    for (int a = 0; a < 3; ++a) {
        nb[static_cast<std::size_t>(a)] = (resolution[static_cast<std::size_t>(a)] + kBlock - 1) / kBlock;
    }
    const Vec3 h = grid.spacing();
    std::vector<std::vector<std::uint32_t>> blocks(static_cast<std::size_t>(nb[0]) * nb[1] * nb[2]);
    for (std::size_t gi = 0; gi < gs.size(); ++gi) {
        std::array<int, 3> lo, hi;
        bool empty = false;
        for (int a = 0; a < 3; ++a) {
            const auto ua = static_cast<std::size_t>(a);
            // One extra sample either side absorbs rounding; truncation decides exactly.
            const double l = (gs[gi].mean[a] - gs[gi].half_extent[a] - bounds.min[a]) / h[a];
            const double u = (gs[gi].mean[a] + gs[gi].half_extent[a] - bounds.min[a]) / h[a];
            lo[ua] = static_cast<int>(std::max(0.0, std::ceil(l) - 1.0));
            hi[ua] = static_cast<int>(std::min(resolution[ua] - 1.0, std::floor(u) + 1.0));
            empty = empty || !(l <= resolution[ua]) || !(u >= -1.0) || lo[ua] > hi[ua];
        }
        if (empty) {
            continue;
        }
        for (int bz = lo[2] / kBlock; bz <= hi[2] / kBlock; ++bz) {
            for (int by = lo[1] / kBlock; by <= hi[1] / kBlock; ++by) {
                for (int bx = lo[0] / kBlock; bx <= hi[0] / kBlock; ++bx) {
                    blocks[static_cast<std::size_t>(bx) + static_cast<std::size_t>(nb[0]) * (by + nb[1] * bz)]
                        .push_back(static_cast<std::uint32_t>(gi));
                }
            }
        }
    }

    parallel_for(blocks.size(), [&](std::size_t b) {
        const int bx = static_cast<int>(b % static_cast<std::size_t>(nb[0]));
        const int by = static_cast<int>(b / static_cast<std::size_t>(nb[0]) % static_cast<std::size_t>(nb[1]));
        const int bz = static_cast<int>(b / (static_cast<std::size_t>(nb[0]) * nb[1]));
        const auto &list = blocks[b];
        for (int k = bz * kBlock; k < std::min(resolution[2], (bz + 1) * kBlock); ++k) {
            for (int j = by * kBlock; j < std::min(resolution[1], (by + 1) * kBlock); ++j) {
                for (int i = bx * kBlock; i < std::min(resolution[0], (bx + 1) * kBlock); ++i) {
                    const Vec3 x = grid.point(i, j, k);
                    double sum = 0.0;
                    for (std::uint32_t gi : list) {
                        sum += term(gs[gi], x, true);
                    }
                    grid.values[grid.index(i, j, k)] = sum;
                }
            }
        }
    });
    return grid;
}

Bounds default_bounds(const GaussianCloud &cloud) {
    if (cloud.empty()) {
        throw EmptyInput("default bounds: empty cloud");
    }
    Bounds b;
    b.min = Vec3::Constant(std::numeric_limits<double>::infinity());
    b.max = -b.min;
    double max_log_scale = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const Vec3 p(cloud.positions[3 * i], cloud.positions[3 * i + 1], cloud.positions[3 * i + 2]);
        b.min = b.min.cwiseMin(p);
        b.max = b.max.cwiseMax(p);
        for (std::size_t a = 0; a < 3; ++a) {
            max_log_scale = std::max(max_log_scale, cloud.log_scales[3 * i + a]);
        }
    }
    const double pad = 3.0 * std::exp(max_log_scale);
    b.min.array() -= pad;
    b.max.array() += pad;
    return b;
}

Mesh marching_cubes(const DensityGrid &grid, double iso) {
    grid.validate();
    const int nx = grid.resolution[0], ny = grid.resolution[1], nz = grid.resolution[2];
    // Edge key: 3 * (lattice index of the lower endpoint) + axis.
    std::vector<std::vector<std::uint64_t>> slabs(static_cast<std::size_t>(nz - 1));
    parallel_for(slabs.size(), [&](std::size_t slab) {
        const int k = static_cast<int>(slab);
        auto &out = slabs[slab];
        for (int j = 0; j + 1 < ny; ++j) {
            for (int i = 0; i + 1 < nx; ++i) {
                int cube = 0;
                for (int c = 0; c < 8; ++c) {
                    if (grid.at(i + kCorner[c][0], j + kCorner[c][1], k + kCorner[c][2]) < iso) {
                        cube |= 1 << c;
                    }
                }
                if (kEdgeTable[cube] == 0) {
                    continue;
                }
                for (int t = 0; kTriTable[cube][t] != -1; t += 3) {
                    // Table winding already faces the corners below iso.
                    for (int v = 0; v < 3; ++v) {
                        const int e = kTriTable[cube][t + v];
                        const int *c = kCorner[kEdge[e][0]];
                        out.push_back(3 * static_cast<std::uint64_t>(grid.index(i + c[0], j + c[1], k + c[2])) +
                                      static_cast<std::uint64_t>(kEdge[e][1]));
                    }
                }
            }
        }
    });

    Mesh mesh;
    std::unordered_map<std::uint64_t, int> vertex_of;
    const auto sx = static_cast<std::uint64_t>(nx), sy = static_cast<std::uint64_t>(ny);
    auto vertex = [&](std::uint64_t key) {
        auto [it, inserted] = vertex_of.try_emplace(key, static_cast<int>(mesh.vertices.size()));
        if (inserted) {
            const std::uint64_t lattice = key / 3;
            const int axis = static_cast<int>(key % 3);
            const int i = static_cast<int>(lattice % sx);
            const int j = static_cast<int>(lattice / sx % sy);
            const int k = static_cast<int>(lattice / (sx * sy));
            const int i2 = i + (axis == 0), j2 = j + (axis == 1), k2 = k + (axis == 2);
            const double va = grid.at(i, j, k), vb = grid.at(i2, j2, k2);
            const double t = (iso - va) / (vb - va);
            const Vec3 a = grid.point(i, j, k);
            mesh.vertices.push_back(a + t * (grid.point(i2, j2, k2) - a));
        }
        return it->second;
    };
    for (const auto &slab : slabs) {
        for (std::size_t t = 0; t < slab.size(); t += 3) {
            Triangle tri;
            for (std::size_t c = 0; c < 3; ++c) {
                tri.corners[c].v = vertex(slab[t + c]);
            }
            tri.face = static_cast<int>(mesh.triangles.size());
            mesh.triangles.push_back(tri);
        }
    }
    return mesh;
}

TexturedMesh bake_texture(const GaussianCloud &cloud, const Mesh &mesh, const std::vector<BakeView> &views,
                          int atlas_size) {
    if (views.empty()) {
        throw InvalidArgument("bake_texture: no views");
    }
    if (mesh.empty()) {
        throw EmptyInput("bake_texture: empty mesh");
    }
    mesh.validate();
    const std::size_t n_tris = mesh.triangles.size();
    const int cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n_tris))));
    const int cell = atlas_size / std::max(1, cols);
    if (cell < 2) {
        throw InvalidArgument("bake_texture: atlas of " + std::to_string(atlas_size) + " px is too small for " +
                              std::to_string(n_tris) + " triangles");
    }

    struct ViewRender {
        RenderOutput out;
        Mat3 w2c;
    };
    std::vector<ViewRender> renders;
    renders.reserve(views.size());
    for (const BakeView &v : views) {
        renders.push_back({render(cloud, v.intr, v.pose, Vec3::Zero()), v.pose.world_to_camera_rotation()});
    }

    const auto a = static_cast<std::size_t>(atlas_size);
    std::vector<Vec3> color(a * a, Vec3::Zero());
    std::vector<std::uint8_t> valid(a * a, 0);

    TexturedMesh result;
    result.mesh = mesh;
    result.mesh.uvs.assign(3 * n_tris, Vec2::Zero());

    parallel_for(n_tris, [&](std::size_t t) {
        const int x0 = static_cast<int>(t % static_cast<std::size_t>(cols)) * cell;
        const int y0 = static_cast<int>(t / static_cast<std::size_t>(cols)) * cell;
        // Chart corners in atlas pixel coordinates, inset half a texel from the cell border.
        const std::array<Vec2, 3> chart{Vec2(x0 + 0.5, y0 + 0.5), Vec2(x0 + cell - 0.5, y0 + 0.5),
                                        Vec2(x0 + 0.5, y0 + cell - 0.5)};
        Triangle &tri = result.mesh.triangles[t];
        std::array<Vec3, 3> p;
        for (std::size_t k = 0; k < 3; ++k) {
            tri.corners[k].vt = static_cast<int>(3 * t + k);
            result.mesh.uvs[3 * t + k] = Vec2(chart[k].x() / atlas_size, 1.0 - chart[k].y() / atlas_size);
            p[k] = mesh.vertices[static_cast<std::size_t>(tri.corners[k].v)];
        }
        tri.material = 0;
        const Vec3 n = mesh.face_normal(t);
        const double span = cell - 1.0;
        for (int y = y0; y < y0 + cell; ++y) {
            for (int x = x0; x < x0 + cell; ++x) {
                // Barycentrics of the texel center. Texels past the hypotenuse are gutter and get
                // inpainted; the rest are clamped onto the chart.
                double l1 = (x + 0.5 - chart[0].x()) / span;
                double l2 = (y + 0.5 - chart[0].y()) / span;
                if (l1 + l2 > 1.0 + 0.5 / span) {
                    continue;
                }
                l1 = std::clamp(l1, 0.0, 1.0);
                l2 = std::clamp(l2, 0.0, 1.0);
                if (l1 + l2 > 1.0) {
                    const double s = l1 + l2;
                    l1 /= s;
                    l2 /= s;
                }
                const Vec3 world = (1.0 - l1 - l2) * p[0] + l1 * p[1] + l2 * p[2];
                Vec3 sum = Vec3::Zero();
                double weight = 0.0;
                for (std::size_t vi = 0; vi < views.size(); ++vi) {
                    const BakeView &view = views[vi];
                    const Vec3 to_cam = view.pose.position - world;
                    const double facing = n.dot(to_cam.normalized());
                    if (!(facing > 0.0)) {
                        continue;
                    }
                    const Vec3 cam = renders[vi].w2c * (-to_cam);
                    const double depth = -cam.z();
                    if (!(depth > view.intr.near_plane)) {
                        continue;
                    }
                    const double f = view.intr.focal();
                    const double u = view.intr.cx() + f * cam.x() / depth;
                    const double v = view.intr.cy() - f * cam.y() / depth;
                    const int px = static_cast<int>(std::floor(u));
                    const int py = static_cast<int>(std::floor(v));
                    if (px < 0 || py < 0 || px >= view.intr.width || py >= view.intr.height) {
                        continue;
                    }
                    const RenderOutput &r = renders[vi].out;
                    const std::size_t pix = static_cast<std::size_t>(py) * view.intr.width + px;
                    if (depth > r.depth[pix] + kBakeDepthTolerance) {
                        continue;
                    }
                    const double alpha = r.color.at(px, py, 3);
                    if (alpha < 1e-3) {
                        continue;
                    }
                    const double w = facing * facing;
                    // Rendered over black, so dividing by alpha recovers the splat color.
                    sum += w / alpha * Vec3(r.color.at(px, py, 0), r.color.at(px, py, 1), r.color.at(px, py, 2));
                    weight += w;
                }
                if (weight > 0.0) {
                    const std::size_t idx = static_cast<std::size_t>(y) * a + static_cast<std::size_t>(x);
                    color[idx] = (sum / weight).cwiseMax(0.0).cwiseMin(1.0);
                    valid[idx] = 1;
                }
            }
        }
    });

    // Breadth-first fill from every seen texel, in raster order.
    std::deque<std::size_t> queue;
    for (std::size_t i = 0; i < a * a; ++i) {
        if (valid[i]) {
            queue.push_back(i);
        }
    }
    while (!queue.empty()) {
        const std::size_t i = queue.front();
        queue.pop_front();
        const std::size_t x = i % a, y = i / a;
        const std::array<std::pair<bool, std::size_t>, 4> nbrs{
            std::pair{x > 0, i - 1}, std::pair{x + 1 < a, i + 1}, std::pair{y > 0, i - a}, std::pair{y + 1 < a, i + a}};
        for (const auto &[ok, j] : nbrs) {
            if (ok && !valid[j]) {
                valid[j] = 1;
                color[j] = color[i];
                queue.push_back(j);
            }
        }
    }

    result.texture = TextureImage(atlas_size, atlas_size, {0.0, 0.0, 0.0, 1.0});
    for (std::size_t i = 0; i < a * a; ++i) {
        for (int c = 0; c < 3; ++c) {
            result.texture.data()[4 * i + static_cast<std::size_t>(c)] = color[i][c];
        }
    }
    return result;
}

void save_textured_mesh(const TexturedMesh &tm, const std::filesystem::path &dir, const std::string &stem) {
    Material m;
    m.name = "baked";
    m.diffuse_rgb = Vec3::Ones();
    m.diffuse_texture = std::make_shared<TextureImage>(tm.texture);
    m.texture_path = stem + ".png";
    save_obj(dir, stem, tm.mesh, {m});
}

} // namespace orbitalsplat
