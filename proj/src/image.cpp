// Copyright (C) 2025 The glave authors
// SPDX-License-Identifier: Apache-2.0

#include "glave/image.hpp"

#include "glave/error.hpp"

#include <openssl/evp.h>
#include <png.h>

#include <algorithm>
#include <cstring>
#include <fstream>
#include <iterator>

namespace glave {

Raster::Raster(int width, int height, Rgb fill) {
    if (width <= 0 || height <= 0) {
        throw DegenerateInputError("raster dimensions must be positive");
    }
    planes_[0] = Plane::Constant(height, width, fill.r);
    planes_[1] = Plane::Constant(height, width, fill.g);
    planes_[2] = Plane::Constant(height, width, fill.b);
}

void Raster::fill_rect(int x1, int y1, int x2, int y2, Rgb c) {
    x1 = std::clamp(x1, 0, width());
    x2 = std::clamp(x2, 0, width());
    y1 = std::clamp(y1, 0, height());
    y2 = std::clamp(y2, 0, height());
    if (x2 <= x1 || y2 <= y1) return;
    planes_[0].block(y1, x1, y2 - y1, x2 - x1).setConstant(c.r);
    planes_[1].block(y1, x1, y2 - y1, x2 - x1).setConstant(c.g);
    planes_[2].block(y1, x1, y2 - y1, x2 - x1).setConstant(c.b);
}

std::vector<std::uint8_t> Raster::interleaved() const {
    const int w = width(), h = height();
    std::vector<std::uint8_t> out(static_cast<std::size_t>(w) * h * 3);
    std::size_t k = 0;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            out[k++] = planes_[0](y, x);
            out[k++] = planes_[1](y, x);
            out[k++] = planes_[2](y, x);
        }
    }
    return out;
}

Raster Raster::from_interleaved(int width, int height, std::span<const std::uint8_t> rgb) {
    if (rgb.size() != static_cast<std::size_t>(width) * height * 3) {
        throw DimensionError("interleaved buffer size does not match raster geometry");
    }
    Raster img(width, height);
    std::size_t k = 0;
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            img.planes_[0](y, x) = rgb[k++];
            img.planes_[1](y, x) = rgb[k++];
            img.planes_[2](y, x) = rgb[k++];
        }
    }
    return img;
}

bool operator==(const Raster& a, const Raster& b) {
    if (a.width() != b.width() || a.height() != b.height()) return false;
    for (int c = 0; c < 3; ++c) {
        if (!(a.planes_[c] == b.planes_[c]).all()) return false;
    }
    return true;
}

Raster fit_long_side(const Raster& src, int max_side) {
    const int w = src.width(), h = src.height();
    const int long_side = std::max(w, h);
    if (max_side <= 0 || long_side <= max_side) return src;
    const double scale = static_cast<double>(max_side) / long_side;
    const int nw = std::max(1, static_cast<int>(w * scale + 0.5));
    const int nh = std::max(1, static_cast<int>(h * scale + 0.5));
    Raster out(nw, nh);
    for (int y = 0; y < nh; ++y) {
        const int sy = std::min(h - 1, static_cast<int>((y + 0.5) * h / nh));
        for (int x = 0; x < nw; ++x) {
            const int sx = std::min(w - 1, static_cast<int>((x + 0.5) * w / nw));
            out.set(x, y, src.at(sx, sy));
        }
    }
    return out;
}

std::vector<std::uint8_t> encode_png(const Raster& img) {
    if (img.empty()) throw DegenerateInputError("cannot encode an empty raster");
    const auto pixels = img.interleaved();
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(img.width());
    image.height = static_cast<png_uint_32>(img.height());
    image.format = PNG_FORMAT_RGB;

    png_alloc_size_t size = 0;
    if (!png_image_write_to_memory(&image, nullptr, &size, 0, pixels.data(), 0, nullptr)) {
        throw FormatError(std::string("png encode failed: ") + image.message);
    }
    std::vector<std::uint8_t> out(size);
    if (!png_image_write_to_memory(&image, out.data(), &size, 0, pixels.data(), 0, nullptr)) {
        throw FormatError(std::string("png encode failed: ") + image.message);
    }
    out.resize(size);
    return out;
}

Raster decode_png(std::span<const std::uint8_t> bytes) {
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
        throw FormatError(std::string("png decode failed: ") + image.message);
    }
    image.format = PNG_FORMAT_RGB;
    std::vector<std::uint8_t> pixels(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, pixels.data(), 0, nullptr)) {
        png_image_free(&image);
        throw FormatError(std::string("png decode failed: ") + image.message);
    }
    return Raster::from_interleaved(static_cast<int>(image.width),
                                    static_cast<int>(image.height), pixels);
}

void write_png(const std::filesystem::path& path, const Raster& img) {
    const auto bytes = encode_png(img);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Raster read_png(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_png(bytes);
}

std::string base64_encode(std::span<const std::uint8_t> bytes) {
    std::string out(4 * ((bytes.size() + 2) / 3), '\0');
    const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                  static_cast<int>(bytes.size()));
    out.resize(static_cast<std::size_t>(n));
    return out;
}

}  // namespace glave
