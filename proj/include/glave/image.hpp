// Copyright (C) 2025 The glave authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace glave {

/// One 8-bit channel, rows = image height, cols = image width.
using Plane = Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Binary object mask, same geometry convention as Plane.
using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Rgb {
    std::uint8_t r = 0, g = 0, b = 0;
    friend bool operator==(const Rgb&, const Rgb&) = default;
};

/// 8-bit RGB raster stored as three planes.
class Raster {
public:
    Raster() = default;
    Raster(int width, int height, Rgb fill = {});

    int width() const noexcept { return static_cast<int>(planes_[0].cols()); }
    int height() const noexcept { return static_cast<int>(planes_[0].rows()); }
    bool empty() const noexcept { return planes_[0].size() == 0; }

    Plane& channel(int c) { return planes_[c]; }
    const Plane& channel(int c) const { return planes_[c]; }

    Rgb at(int x, int y) const {
        return {planes_[0](y, x), planes_[1](y, x), planes_[2](y, x)};
    }
    void set(int x, int y, Rgb c) {
        planes_[0](y, x) = c.r;
        planes_[1](y, x) = c.g;
        planes_[2](y, x) = c.b;
    }
    void fill_rect(int x1, int y1, int x2, int y2, Rgb c);

    /// Interleaved RGB bytes, row-major.
    std::vector<std::uint8_t> interleaved() const;
    static Raster from_interleaved(int width, int height, std::span<const std::uint8_t> rgb);

    friend bool operator==(const Raster& a, const Raster& b);

private:
    std::array<Plane, 3> planes_;
};

/// Nearest-neighbour downscale so that the long side is at most max_side.
Raster fit_long_side(const Raster& src, int max_side);

std::vector<std::uint8_t> encode_png(const Raster& img);
Raster decode_png(std::span<const std::uint8_t> bytes);
void write_png(const std::filesystem::path& path, const Raster& img);
Raster read_png(const std::filesystem::path& path);

std::string base64_encode(std::span<const std::uint8_t> bytes);

}  // namespace glave
