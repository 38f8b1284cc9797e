// Copyright Contributors to the OrbitalSplat Project
// SPDX-License-Identifier: Apache-2.0
//
#include "orbitalsplat/raster.hpp"

#include "orbitalsplat/error.hpp"
#include "orbitalsplat/parallel.hpp"

#include <algorithm>
#include <cmath>

namespace orbitalsplat {

Framebuffer::Framebuffer(int width, int height, std::array<double, 4> background)
    : color(width, height, background),
      depth(static_cast<std::size_t>(width) * static_cast<std::size_t>(height),
            std::numeric_limits<double>::infinity()) {}

std::string_view to_string(Shading shading) {
    switch (shading) {
    case Shading::Flat:
        return "flat";
    case Shading::Lambertian:
        return "lambertian";
    case Shading::Textured:
        return "textured";
    }
    return "textured";
}

Shading shading_from_string(std::string_view name) {
    if (name == "flat") {
        return Shading::Flat;
    }
    if (name == "lambertian") {
        return Shading::Lambertian;
    }
    if (name == "textured") {
        return Shading::Textured;
    }
    throw InvalidArgument("unknown shading mode '" + std::string(name) + "'");
}

void RenderSettings::validate() const {
    if (background_alpha != 0.0 && background_alpha != 1.0) {
        throw InvalidArgument("background_alpha must be 0 or 1");
    }
    if (light_dir && std::abs(light_dir->norm() - 1.0) > 1e-9) {
        throw InvalidArgument("light_dir must be unit length");
    }
    if (!(ambient >= 0.0 && ambient <= 1.0)) {
        throw InvalidArgument("ambient must lie in [0, 1]");
    }
}

namespace {

/// Clip-space vertex: camera-space position plus barycentric weights w.r.t. the source triangle.
struct ClipVertex {
    Vec3 cam;
    Vec3 bary;
};

/// Screen-space triangle ready for scan conversion.
struct ScreenTriangle {
    std::array<Vec2, 3> screen;
    std::array<double, 3> inv_depth;
    std::array<Vec3, 3> bary;
    std::size_t source;
    int min_x, max_x, min_y, max_y;
    double area2;
};

std::vector<ClipVertex> clip_near(const std::array<ClipVertex, 3> &tri, double near_plane) {
    // Keep the part with depth (= -z) >= near.
    std::vector<ClipVertex> out;
    out.reserve(4);
    for (std::size_t i = 0; i < 3; ++i) {
        const ClipVertex &a = tri[i];
        const ClipVertex &b = tri[(i + 1) % 3];
        const double da = -a.cam.z() - near_plane;
        const double db = -b.cam.z() - near_plane;
        if (da >= 0.0) {
            out.push_back(a);
        }
        if ((da >= 0.0) != (db >= 0.0)) {
            const double t = da / (da - db);
            out.push_back({a.cam + t * (b.cam - a.cam), a.bary + t * (b.bary - a.bary)});
        }
    }
    return out;
}

bool top_left(const Vec2 &a, const Vec2 &b) {
    const double dx = b.x() - a.x();
    const double dy = b.y() - a.y();
    return (dy == 0.0 && dx > 0.0) || dy < 0.0;
}

// Evaluated from a canonical endpoint order so that a shared edge gives exactly opposite values
// for its two triangles; otherwise rounding can drop pixel centers lying on the edge from both.
double edge(const Vec2 &a, const Vec2 &b, double px, double py) {
    const bool flip = b.x() < a.x() || (b.x() == a.x() && b.y() < a.y());
    const Vec2 &p = flip ? b : a;
    const Vec2 &q = flip ? a : b;
    const double e = (q.x() - p.x()) * (py - p.y()) - (q.y() - p.y()) * (px - p.x());
    return flip ? -e : e;
}

std::vector<ScreenTriangle> setup_triangles(const Mesh &mesh, const CameraIntrinsics &intr,
                                            const CameraPose &pose) {
    const Mat3 w2c = pose.world_to_camera_rotation();
    const double f = intr.focal();
    std::vector<ScreenTriangle> out;
    out.reserve(mesh.triangles.size());
    for (std::size_t ti = 0; ti < mesh.triangles.size(); ++ti) {
        const auto &corners = mesh.triangles[ti].corners;
        std::array<ClipVertex, 3> tri;
        for (std::size_t k = 0; k < 3; ++k) {
            tri[k].cam = w2c * (mesh.vertices[static_cast<std::size_t>(corners[k].v)] - pose.position);
            tri[k].bary = Vec3::Zero();
            tri[k].bary[static_cast<Eigen::Index>(k)] = 1.0;
        }
        const auto poly = clip_near(tri, intr.near_plane);
        if (poly.size() < 3) {
            continue;
        }
        for (std::size_t k = 1; k + 1 < poly.size(); ++k) {
            ScreenTriangle st;
            const std::array<const ClipVertex *, 3> verts{&poly[0], &poly[k], &poly[k + 1]};
            for (std::size_t j = 0; j < 3; ++j) {
                const double depth = -verts[j]->cam.z();
                st.screen[j] = Vec2(intr.cx() + f * verts[j]->cam.x() / depth,
                                    intr.cy() - f * verts[j]->cam.y() / depth);
                st.inv_depth[j] = 1.0 / depth;
                st.bary[j] = verts[j]->bary;
            }
            st.area2 = edge(st.screen[0], st.screen[1], st.screen[2].x(), st.screen[2].y());
            if (st.area2 == 0.0 || !std::isfinite(st.area2)) {
                continue;
            }
            if (st.area2 < 0.0) {
                std::swap(st.screen[1], st.screen[2]);
                std::swap(st.inv_depth[1], st.inv_depth[2]);
                std::swap(st.bary[1], st.bary[2]);
                st.area2 = -st.area2;
            }
            double lo_x = st.screen[0].x(), hi_x = lo_x, lo_y = st.screen[0].y(), hi_y = lo_y;
            for (const auto &s : st.screen) {
                lo_x = std::min(lo_x, s.x());
                hi_x = std::max(hi_x, s.x());
                lo_y = std::min(lo_y, s.y());
                hi_y = std::max(hi_y, s.y());
            }
            // Pixels whose centers (x + 0.5) can fall inside the box.
            st.min_x = std::max(0, static_cast<int>(std::floor(lo_x - 0.5)));
            st.max_x = std::min(intr.width - 1, static_cast<int>(std::ceil(hi_x - 0.5)));
            st.min_y = std::max(0, static_cast<int>(std::floor(lo_y - 0.5)));
            st.max_y = std::min(intr.height - 1, static_cast<int>(std::ceil(hi_y - 0.5)));
            if (st.min_x > st.max_x || st.min_y > st.max_y) {
                continue;
            }
            st.source = ti;
            out.push_back(st);
        }
    }
    return out;
}

struct Shader {
    const Mesh &mesh;
    const std::vector<Material> &materials;
    const RenderSettings &settings;
    const CameraPose &pose;
    Vec3 headlight;

    Vec3 shade(const ScreenTriangle &st, const Vec3 &bary, const Vec3 &world_point) const {
        const Triangle &tri = mesh.triangles[st.source];
        const Material *mat = tri.material >= 0 &&
                                      static_cast<std::size_t>(tri.material) < materials.size()
                                  ? &materials[static_cast<std::size_t>(tri.material)]
                                  : nullptr;
        Vec3 base = mat ? mat->diffuse_rgb : kFallbackGray;
        if (settings.shading == Shading::Flat) {
            return base;
        }
        const auto &c = tri.corners;
        if (mat && mat->diffuse_texture && c[0].vt >= 0 && c[1].vt >= 0 && c[2].vt >= 0) {
            Vec2 uv = Vec2::Zero();
            for (std::size_t k = 0; k < 3; ++k) {
                uv += bary[static_cast<Eigen::Index>(k)] * mesh.uvs[static_cast<std::size_t>(c[k].vt)];
            }
            const auto texel = sample_texture(*mat->diffuse_texture, uv.x(), uv.y());
            base = Vec3(texel[0], texel[1], texel[2]);
        }
        if (settings.shading == Shading::Textured) {
            return base;
        }
        Vec3 n = Vec3::Zero();
        if (c[0].vn >= 0 && c[1].vn >= 0 && c[2].vn >= 0) {
            for (std::size_t k = 0; k < 3; ++k) {
                n += bary[static_cast<Eigen::Index>(k)] * mesh.normals[static_cast<std::size_t>(c[k].vn)];
            }
        }
        if (n.norm() < 1e-12) {
            n = mesh.face_normal(st.source);
        } else {
            n.normalize();
        }
        // Two-sided: face the viewer.
        if (n.dot(pose.position - world_point) < 0.0) {
            n = -n;
        }
        const Vec3 l = settings.light_dir.value_or(headlight);
        const double lambert = std::max(0.0, n.dot(l)) + settings.ambient;
        return (base * lambert).cwiseMin(1.0);
    }
};

void rasterize_rows(const std::vector<ScreenTriangle> &tris, const Shader &shader, int y0, int y1,
                    const CameraIntrinsics &intr, Framebuffer &fb) {
    const int width = fb.width();
    for (const ScreenTriangle &st : tris) {
        const int ya = std::max(st.min_y, y0);
        const int yb = std::min(st.max_y, y1 - 1);
        if (ya > yb) {
            continue;
        }
        const bool tl0 = top_left(st.screen[1], st.screen[2]);
        const bool tl1 = top_left(st.screen[2], st.screen[0]);
        const bool tl2 = top_left(st.screen[0], st.screen[1]);
        const Triangle &tri = shader.mesh.triangles[st.source];
        for (int y = ya; y <= yb; ++y) {
            const double py = y + 0.5;
            for (int x = st.min_x; x <= st.max_x; ++x) {
                const double px = x + 0.5;
                const double w0 = edge(st.screen[1], st.screen[2], px, py);
                const double w1 = edge(st.screen[2], st.screen[0], px, py);
                const double w2 = edge(st.screen[0], st.screen[1], px, py);
                const bool inside = (w0 > 0.0 || (w0 == 0.0 && tl0)) &&
                                    (w1 > 0.0 || (w1 == 0.0 && tl1)) &&
                                    (w2 > 0.0 || (w2 == 0.0 && tl2));
                if (!inside) {
                    continue;
                }
                const double l0 = w0 / st.area2;
                const double l1 = w1 / st.area2;
                const double l2 = w2 / st.area2;
                const double inv_d = l0 * st.inv_depth[0] + l1 * st.inv_depth[1] + l2 * st.inv_depth[2];
                const double depth = 1.0 / inv_d;
                const std::size_t idx = static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + x;
                if (!(depth < fb.depth[idx]) || depth > intr.far_plane) {
                    continue;
                }
                const double m0 = l0 * st.inv_depth[0] / inv_d;
                const double m1 = l1 * st.inv_depth[1] / inv_d;
                const double m2 = l2 * st.inv_depth[2] / inv_d;
                const Vec3 bary = m0 * st.bary[0] + m1 * st.bary[1] + m2 * st.bary[2];
                Vec3 world = Vec3::Zero();
                for (std::size_t k = 0; k < 3; ++k) {
                    world += bary[static_cast<Eigen::Index>(k)] *
                             shader.mesh.vertices[static_cast<std::size_t>(tri.corners[k].v)];
                }
                const Vec3 rgb = shader.shade(st, bary, world);
                fb.depth[idx] = depth;
                fb.color.at(x, y, 0) = rgb.x();
                fb.color.at(x, y, 1) = rgb.y();
                fb.color.at(x, y, 2) = rgb.z();
                fb.color.at(x, y, 3) = 1.0;
            }
        }
    }
}

} // namespace

Framebuffer render_mesh(const Mesh &mesh, const std::vector<Material> &materials,
                        const CameraIntrinsics &intr, const CameraPose &pose,
                        const RenderSettings &settings) {
    intr.validate();
    settings.validate();
    const std::array<double, 4> bg =
        settings.background_alpha == 1.0
            ? std::array<double, 4>{settings.background_rgb.x(), settings.background_rgb.y(),
                                    settings.background_rgb.z(), 1.0}
            : std::array<double, 4>{0.0, 0.0, 0.0, 0.0};
    Framebuffer fb(intr.width, intr.height, bg);
    if (mesh.empty()) {
        return fb;
    }
    mesh.validate();
    const auto tris = setup_triangles(mesh, intr, pose);
    const Shader shader{mesh, materials, settings, pose, -pose.forward()};

    // Fixed row bands; every band sees all triangles in the same order, so the result does
    // not depend on how many workers run them.
    constexpr int kBandRows = 16;
    const int bands = (intr.height + kBandRows - 1) / kBandRows;
    parallel_for(static_cast<std::size_t>(bands), [&](std::size_t b) {
        const int y0 = static_cast<int>(b) * kBandRows;
        rasterize_rows(tris, shader, y0, std::min(intr.height, y0 + kBandRows), intr, fb);
    });
    return fb;
}

} // namespace orbitalsplat
