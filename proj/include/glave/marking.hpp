// Copyright (C) 2025 The glave authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "glave/image.hpp"
#include "glave/jsonio.hpp"
#include "glave/tracking.hpp"

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string_view>
#include <span>
#include <vector>

namespace glave::marking {

inline constexpr std::size_t kPaletteSize = 12;
const std::array<Rgb, kPaletteSize>& palette();

/// palette()[(id - 1) mod 12]
Rgb mark_color(int track_id);

inline constexpr int kStrokeRadius = 1;   // 3 px band centred on the boundary
inline constexpr int kOutlineRadius = 2;  // plus 1 px dark ring outside it
inline constexpr Rgb kOutlineColor{16, 16, 16};

struct Point {
    int x = 0, y = 0;
    friend bool operator==(const Point&, const Point&) = default;
};

enum class AnchorSource { centroid, box_center };

struct MarkEntry {
    int track_id = 0;
    Point anchor;
    Rgb color;
    tracking::Box label_box;
    AnchorSource anchor_source = AnchorSource::centroid;
    bool nudged = false;  // label moved down to avoid an earlier label
};

struct MarkedKeyframe {
    int keyframe_index = 0;
    Raster image;
    std::vector<MarkEntry> manifest;
};

/// Boundary pixels of a mask: set pixels with a 4-neighbour that is unset or
/// outside the image.
Mask mask_boundary(const Mask& mask);

/// Square (Chebyshev) dilation by `radius` pixels.
Mask dilate(const Mask& mask, int radius);

/// The object's mask, or its filled box when no mask is attached.
Mask object_mask(const tracking::Detection& det, int width, int height);

/// Anchor rule: mask centroid when it falls on the mask and inside the box,
/// otherwise the box centre.
std::pair<Point, AnchorSource> anchor_for(const Mask& mask, const tracking::Box& box);

/// Glyph scale for ids on an image of this size.
int label_scale(int width, int height);
/// Pixel extent of a rendered id label (including padding).
Point label_extent(int track_id, int scale);

MarkedKeyframe render_marks(const Raster& keyframe, std::span<const tracking::TrackedObject> objects,
                            int keyframe_index);

json to_json(const MarkEntry& e);
void write_marks(const std::filesystem::path& path, const std::map<int, std::vector<MarkEntry>>& marks);

/// Draws `text` (digits, '#', '.', '%', '-', letters A-Z) with the built-in 5x7 font.
void draw_text(Raster& img, int x, int y, std::string_view text, int scale, Rgb color,
               std::optional<tracking::Box> clip = std::nullopt);
/// Width in pixels of `text` at `scale`.
int text_width(std::string_view text, int scale);

}  // namespace glave::marking
