// Copyright Contributors to the OrbitalSplat Project
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include "orbitalsplat/geometry.hpp"
#include "orbitalsplat/image.hpp"

namespace orbitalsplat {

struct PreprocessOptions {
    double matte_threshold = 0.5;
    double border_ratio = 0.2;
    int target_size = 256;

    void validate() const;
};

/// Pixels with alpha below `threshold` become (0,0,0,0); the rest become fully opaque.
ImageRGBA alpha_matte(const ImageRGBA &img, double threshold);

/// Crops the foreground (pixels with alpha >= half the image's maximum alpha), pads it to a
/// square, and resizes it so it fills target * (1 - 2 * border_ratio) centered in a
/// target x target frame.
ImageRGBA recenter_resize(const ImageRGBA &img, int target, double border_ratio);

/// out_rgb = a * rgb + (1 - a) * background, out_alpha = 1.
ImageRGBA composite_over(const ImageRGBA &img, const Vec3 &background_rgb);

/// Alpha-weighted resampling: bilinear when enlarging, supersampled bilinear when shrinking
/// (an exact 2x reduction is a 2x2 box filter).
ImageRGBA resize(const ImageRGBA &img, int width, int height);

/// Matte then recenter, the standard input preparation.
ImageRGBA standardize(const ImageRGBA &img, const PreprocessOptions &opts);

struct PixelBox {
    int x0 = 0, y0 = 0, x1 = -1, y1 = -1; ///< inclusive
    bool empty() const { return x1 < x0 || y1 < y0; }
    int width() const { return x1 - x0 + 1; }
    int height() const { return y1 - y0 + 1; }
};

/// Bounding box of pixels with alpha >= threshold.
PixelBox alpha_bbox(const ImageRGBA &img, double threshold);

/// Alpha-weighted centroid in continuous pixel coordinates (pixel centers at +0.5).
Vec2 alpha_centroid(const ImageRGBA &img);

} // namespace orbitalsplat
