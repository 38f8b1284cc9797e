// Copyright Contributors to the OrbitalSplat Project
// SPDX-License-Identifier: Apache-2.0
//
#include "orbitalsplat/image.hpp"

#include "orbitalsplat/error.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>

namespace orbitalsplat {

ImageRGBA::ImageRGBA(int width, int height, std::array<double, 4> fill)
    : width_(width), height_(height) {
    if (width < 0 || height < 0) {
        throw InvalidArgument("image dimensions must be non-negative");
    }
    data_.resize(pixel_count() * 4);
    for (std::size_t i = 0; i < pixel_count(); ++i) {
        std::copy(fill.begin(), fill.end(), data_.begin() + static_cast<std::ptrdiff_t>(i * 4));
    }
}

bool ImageRGBA::in_unit_range() const {
    return std::all_of(data_.begin(), data_.end(),
                       [](double v) { return std::isfinite(v) && v >= 0.0 && v <= 1.0; });
}

std::uint8_t quantize_channel(double v) {
    const double c = std::clamp(v, 0.0, 1.0);
    return static_cast<std::uint8_t>(std::lround(c * 255.0));
}

namespace {

std::vector<std::uint8_t> to_bytes(const ImageRGBA &image) {
    std::vector<std::uint8_t> bytes(image.pixel_count() * 4);
    auto src = image.data();
    for (std::size_t i = 0; i < bytes.size(); ++i) {
        bytes[i] = quantize_channel(src[i]);
    }
    return bytes;
}

ImageRGBA from_bytes(int width, int height, const std::vector<std::uint8_t> &bytes) {
    ImageRGBA image(width, height);
    auto dst = image.data();
    for (std::size_t i = 0; i < bytes.size(); ++i) {
        dst[i] = bytes[i] / 255.0;
    }
    return image;
}

struct PngImage {
    png_image image{};
    PngImage() {
        image.version = PNG_IMAGE_VERSION;
    }
    ~PngImage() { png_image_free(&image); }
    PngImage(const PngImage &) = delete;
    PngImage &operator=(const PngImage &) = delete;
};

} // namespace

ImageRGBA read_png(const std::filesystem::path &path) {
    PngImage png;
    if (!png_image_begin_read_from_file(&png.image, path.string().c_str())) {
        throw IoError("cannot read PNG '" + path.string() + "': " + png.image.message);
    }
    png.image.format = PNG_FORMAT_RGBA;
    std::vector<std::uint8_t> bytes(PNG_IMAGE_SIZE(png.image));
    if (!png_image_finish_read(&png.image, nullptr, bytes.data(), 0, nullptr)) {
        throw IoError("cannot decode PNG '" + path.string() + "': " + png.image.message);
    }
    return from_bytes(static_cast<int>(png.image.width), static_cast<int>(png.image.height), bytes);
}

ImageRGBA decode_png(std::span<const std::uint8_t> bytes) {
    PngImage png;
    if (!png_image_begin_read_from_memory(&png.image, bytes.data(), bytes.size())) {
        throw IoError(std::string("cannot decode PNG from memory: ") + png.image.message);
    }
    png.image.format = PNG_FORMAT_RGBA;
    std::vector<std::uint8_t> pixels(PNG_IMAGE_SIZE(png.image));
    if (!png_image_finish_read(&png.image, nullptr, pixels.data(), 0, nullptr)) {
        throw IoError(std::string("cannot decode PNG from memory: ") + png.image.message);
    }
    return from_bytes(static_cast<int>(png.image.width), static_cast<int>(png.image.height), pixels);
}

void write_png(const ImageRGBA &image, const std::filesystem::path &path) {
    if (image.empty()) {
        throw InvalidArgument("cannot write an empty image to '" + path.string() + "'");
    }
    const auto bytes = to_bytes(image);
    PngImage png;
    png.image.width = static_cast<png_uint_32>(image.width());
    png.image.height = static_cast<png_uint_32>(image.height());
    png.image.format = PNG_FORMAT_RGBA;
    if (!png_image_write_to_file(&png.image, path.string().c_str(), 0, bytes.data(), 0, nullptr)) {
        throw IoError("cannot write PNG '" + path.string() + "': " + png.image.message);
    }
}

std::vector<std::uint8_t> encode_png(const ImageRGBA &image) {
    if (image.empty()) {
        throw InvalidArgument("cannot encode an empty image");
    }
    const auto bytes = to_bytes(image);
    PngImage png;
    png.image.width = static_cast<png_uint_32>(image.width());
    png.image.height = static_cast<png_uint_32>(image.height());
    png.image.format = PNG_FORMAT_RGBA;
    png_alloc_size_t size = 0;
    if (!png_image_write_to_memory(&png.image, nullptr, &size, 0, bytes.data(), 0, nullptr)) {
        throw IoError(std::string("cannot size PNG encoding: ") + png.image.message);
    }
    std::vector<std::uint8_t> out(size);
    if (!png_image_write_to_memory(&png.image, out.data(), &size, 0, bytes.data(), 0, nullptr)) {
        throw IoError(std::string("cannot encode PNG: ") + png.image.message);
    }
    out.resize(size);
    return out;
}

} // namespace orbitalsplat
