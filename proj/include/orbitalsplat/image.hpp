// Copyright Contributors to the OrbitalSplat Project
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace orbitalsplat {

/// H x W x 4 image with straight (non-premultiplied) alpha, channels in [0, 1].
class ImageRGBA {
  public:
    ImageRGBA() = default;
    ImageRGBA(int width, int height, std::array<double, 4> fill = {0.0, 0.0, 0.0, 0.0});

    int width() const { return width_; }
    int height() const { return height_; }
    bool empty() const { return width_ == 0 || height_ == 0; }
    std::size_t pixel_count() const { return static_cast<std::size_t>(width_) * height_; }

    double &at(int x, int y, int c) { return data_[index(x, y) + static_cast<std::size_t>(c)]; }
    double at(int x, int y, int c) const { return data_[index(x, y) + static_cast<std::size_t>(c)]; }
    double alpha(int x, int y) const { return at(x, y, 3); }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }

    bool same_size(const ImageRGBA &other) const {
        return width_ == other.width_ && height_ == other.height_;
    }

    /// True when every channel is finite and inside [0, 1].
    bool in_unit_range() const;

  private:
    std::size_t index(int x, int y) const {
        return (static_cast<std::size_t>(y) * width_ + x) * 4;
    }

    int width_ = 0;
    int height_ = 0;
    std::vector<double> data_;
};

/// 8-bit RGBA PNG. Values are mapped linearly; no gamma handling.
ImageRGBA read_png(const std::filesystem::path &path);
void write_png(const ImageRGBA &image, const std::filesystem::path &path);

ImageRGBA decode_png(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_png(const ImageRGBA &image);

/// Quantizes a channel value to 8 bits with round-to-nearest.
std::uint8_t quantize_channel(double v);

} // namespace orbitalsplat
