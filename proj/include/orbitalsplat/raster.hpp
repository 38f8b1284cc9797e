// Copyright Contributors to the OrbitalSplat Project
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include "orbitalsplat/geometry.hpp"
#include "orbitalsplat/image.hpp"
#include "orbitalsplat/mesh.hpp"

#include <limits>
#include <optional>
#include <string_view>
#include <vector>

namespace orbitalsplat {

/// Color plus camera-space depth; depth is +inf (and alpha 0) where nothing was drawn.
struct Framebuffer {
    ImageRGBA color;
    std::vector<double> depth;

    Framebuffer() = default;
    Framebuffer(int width, int height, std::array<double, 4> background);

    int width() const { return color.width(); }
    int height() const { return color.height(); }
    double depth_at(int x, int y) const {
        return depth[static_cast<std::size_t>(y) * static_cast<std::size_t>(width()) + x];
    }
};

enum class Shading { Flat, Lambertian, Textured };

std::string_view to_string(Shading shading);
Shading shading_from_string(std::string_view name);

struct RenderSettings {
    Shading shading = Shading::Textured;
    /// Direction toward the light. Unset means a headlight along the camera's view axis.
    std::optional<Vec3> light_dir;
    double ambient = 0.15;
    /// 0 leaves uncovered pixels transparent black; 1 fills them with background_rgb.
    double background_alpha = 0.0;
    Vec3 background_rgb{1.0, 1.0, 1.0};

    void validate() const;
};

/// Z-buffered rasterization with perspective-correct interpolation. Pixel centers sit at
/// (x + 0.5, y + 0.5); a center on an edge is covered only for top-left edges. Triangles are
/// two-sided and clipped against the near plane.
Framebuffer render_mesh(const Mesh &mesh, const std::vector<Material> &materials,
                        const CameraIntrinsics &intr, const CameraPose &pose,
                        const RenderSettings &settings = {});

} // namespace orbitalsplat
