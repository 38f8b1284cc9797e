// Copyright Contributors to the OrbitalSplat Project
// SPDX-License-Identifier: Apache-2.0
//
#include "orbitalsplat/imageops.hpp"

#include "orbitalsplat/error.hpp"
#include "orbitalsplat/parallel.hpp"

#include <algorithm>
#include <cmath>

namespace orbitalsplat {

void PreprocessOptions::validate() const {
    if (!(matte_threshold >= 0.0 && matte_threshold <= 1.0)) {
        throw InvalidArgument("matte threshold must lie in [0, 1]");
    }
    if (!(border_ratio >= 0.0 && border_ratio < 0.5)) {
        throw InvalidArgument("border_ratio must lie in [0, 0.5)");
    }
    if (target_size < 1) {
        throw InvalidArgument("target size must be at least 1 pixel");
    }
}

ImageRGBA alpha_matte(const ImageRGBA &img, double threshold) {
    if (!(threshold >= 0.0 && threshold <= 1.0)) {
        throw InvalidArgument("alpha_matte: threshold must lie in [0, 1]");
    }
    ImageRGBA out = img;
    auto px = out.data();
    for (std::size_t i = 0; i < out.pixel_count(); ++i) {
        double *p = &px[i * 4];
        if (p[3] < threshold) {
            p[0] = p[1] = p[2] = p[3] = 0.0;
        } else {
            p[3] = 1.0;
        }
    }
    return out;
}

ImageRGBA composite_over(const ImageRGBA &img, const Vec3 &background_rgb) {
    ImageRGBA out = img;
    auto px = out.data();
    for (std::size_t i = 0; i < out.pixel_count(); ++i) {
        double *p = &px[i * 4];
        const double a = p[3];
        for (int c = 0; c < 3; ++c) {
            p[c] = a * p[c] + (1.0 - a) * background_rgb[c];
        }
        p[3] = 1.0;
    }
    return out;
}

PixelBox alpha_bbox(const ImageRGBA &img, double threshold) {
    PixelBox box{img.width(), img.height(), -1, -1};
    for (int y = 0; y < img.height(); ++y) {
        for (int x = 0; x < img.width(); ++x) {
            if (img.alpha(x, y) >= threshold && img.alpha(x, y) > 0.0) {
                box.x0 = std::min(box.x0, x);
                box.y0 = std::min(box.y0, y);
                box.x1 = std::max(box.x1, x);
                box.y1 = std::max(box.y1, y);
            }
        }
    }
    return box;
}

Vec2 alpha_centroid(const ImageRGBA &img) {
    double sum = 0.0;
    Vec2 acc = Vec2::Zero();
    for (int y = 0; y < img.height(); ++y) {
        for (int x = 0; x < img.width(); ++x) {
            const double a = img.alpha(x, y);
            sum += a;
            acc += a * Vec2(x + 0.5, y + 0.5);
        }
    }
    return sum > 0.0 ? Vec2(acc / sum) : Vec2(0.5 * img.width(), 0.5 * img.height());
}

namespace {

/// Premultiplied bilinear sample at continuous coordinates (pixel centers at +0.5); samples
/// outside the image are transparent. Returns (r*a, g*a, b*a, a).
std::array<double, 4> sample_premultiplied(const ImageRGBA &img, double sx, double sy) {
    const double x = sx - 0.5;
    const double y = sy - 0.5;
    const double fx = std::floor(x);
    const double fy = std::floor(y);
    const double tx = x - fx;
    const double ty = y - fy;
    const int x0 = static_cast<int>(fx);
    const int y0 = static_cast<int>(fy);
    std::array<double, 4> acc{};
    const double wts[4] = {(1 - tx) * (1 - ty), tx * (1 - ty), (1 - tx) * ty, tx * ty};
    const int xs[4] = {x0, x0 + 1, x0, x0 + 1};
    const int ys[4] = {y0, y0, y0 + 1, y0 + 1};
    for (int k = 0; k < 4; ++k) {
        if (wts[k] == 0.0 || xs[k] < 0 || ys[k] < 0 || xs[k] >= img.width() || ys[k] >= img.height()) {
            continue;
        }
        const double a = img.at(xs[k], ys[k], 3) * wts[k];
        acc[0] += a * img.at(xs[k], ys[k], 0);
        acc[1] += a * img.at(xs[k], ys[k], 1);
        acc[2] += a * img.at(xs[k], ys[k], 2);
        acc[3] += a;
    }
    return acc;
}

/// Maps output pixel coordinates to source coordinates: src = origin + out / scale.
ImageRGBA resample(const ImageRGBA &img, int width, int height, double scale_x, double scale_y,
                   Vec2 origin) {
    ImageRGBA out(width, height);
    const int nx = std::max(1, static_cast<int>(std::ceil(1.0 / scale_x - 1e-9)));
    const int ny = std::max(1, static_cast<int>(std::ceil(1.0 / scale_y - 1e-9)));
    parallel_for(static_cast<std::size_t>(height), [&](std::size_t row) {
        const int y = static_cast<int>(row);
        for (int x = 0; x < width; ++x) {
            std::array<double, 4> acc{};
            for (int j = 0; j < ny; ++j) {
                const double oy = y + (j + 0.5) / ny;
                for (int i = 0; i < nx; ++i) {
                    const double ox = x + (i + 0.5) / nx;
                    const auto s = sample_premultiplied(img, origin.x() + ox / scale_x,
                                                        origin.y() + oy / scale_y);
                    for (std::size_t c = 0; c < 4; ++c) {
                        acc[c] += s[c];
                    }
                }
            }
            const double n = static_cast<double>(nx * ny);
            const double a = acc[3] / n;
            if (acc[3] > 0.0) {
                for (int c = 0; c < 3; ++c) {
                    out.at(x, y, c) = std::clamp(acc[static_cast<std::size_t>(c)] / acc[3], 0.0, 1.0);
                }
            }
            out.at(x, y, 3) = std::clamp(a, 0.0, 1.0);
        }
    });
    return out;
}

} // namespace

ImageRGBA resize(const ImageRGBA &img, int width, int height) {
    if (width < 1 || height < 1) {
        throw InvalidArgument("resize: target dimensions must be positive");
    }
    if (img.empty()) {
        throw InvalidArgument("resize: empty image");
    }
    if (width == img.width() && height == img.height()) {
        return img;
    }
    return resample(img, width, height, static_cast<double>(width) / img.width(),
                    static_cast<double>(height) / img.height(), Vec2::Zero());
}

ImageRGBA recenter_resize(const ImageRGBA &img, int target, double border_ratio) {
    if (target < 1) {
        throw InvalidArgument("recenter_resize: target must be positive");
    }
    if (!(border_ratio >= 0.0 && border_ratio < 0.5)) {
        throw InvalidArgument("recenter_resize: border_ratio must lie in [0, 0.5)");
    }
    double max_alpha = 0.0;
    for (int y = 0; y < img.height(); ++y) {
        for (int x = 0; x < img.width(); ++x) {
            max_alpha = std::max(max_alpha, img.alpha(x, y));
        }
    }
    if (!(max_alpha > 0.0)) {
        throw EmptyInput("recenter_resize: image has no foreground");
    }
    const PixelBox box = alpha_bbox(img, 0.5 * max_alpha);
    const double side = std::max(box.width(), box.height());
    const Vec2 center(0.5 * (box.x0 + box.x1 + 1), 0.5 * (box.y0 + box.y1 + 1));
    const double scale = target * (1.0 - 2.0 * border_ratio) / side;
    const Vec2 origin = center - Vec2::Constant(0.5 * target / scale);
    return resample(img, target, target, scale, scale, origin);
}

ImageRGBA standardize(const ImageRGBA &img, const PreprocessOptions &opts) {
    opts.validate();
    return recenter_resize(alpha_matte(img, opts.matte_threshold), opts.target_size,
                           opts.border_ratio);
}

} // namespace orbitalsplat
