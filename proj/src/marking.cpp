// Copyright (C) 2025 The glave authors
// SPDX-License-Identifier: Apache-2.0

#include "glave/marking.hpp"

#include "font5x7.hpp"

#include <algorithm>

namespace glave::marking {

const std::array<Rgb, kPaletteSize>& palette() {
    static const std::array<Rgb, kPaletteSize> colors{{
        {230, 25, 75},   {60, 180, 75},  {255, 225, 25}, {0, 130, 200},
        {245, 130, 48},  {145, 30, 180}, {70, 240, 240}, {240, 50, 230},
        {210, 245, 60},  {250, 190, 212}, {0, 128, 128}, {170, 110, 40},
    }};
    return colors;
}

Rgb mark_color(int track_id) {
    const int n = static_cast<int>(kPaletteSize);
    const int slot = ((track_id - 1) % n + n) % n;
    return palette()[static_cast<std::size_t>(slot)];
}

Mask mask_boundary(const Mask& mask) {
    const Eigen::Index h = mask.rows(), w = mask.cols();
    Mask interior = mask;
    if (h == 0 || w == 0) return interior;
    // A pixel is interior when all four neighbours are set; the image edge
    // counts as unset.
    interior.row(0).setConstant(false);
    interior.row(h - 1).setConstant(false);
    interior.col(0).setConstant(false);
    interior.col(w - 1).setConstant(false);
    if (h > 2 && w > 2) {
        auto core = interior.block(1, 1, h - 2, w - 2);
        core = core && mask.block(0, 1, h - 2, w - 2) && mask.block(2, 1, h - 2, w - 2) &&
               mask.block(1, 0, h - 2, w - 2) && mask.block(1, 2, h - 2, w - 2);
    }
    return mask && !interior;
}

Mask dilate(const Mask& mask, int radius) {
    const Eigen::Index h = mask.rows(), w = mask.cols();
    Mask horiz = mask;
    for (Eigen::Index d = 1; d <= radius && d < w; ++d) {
        horiz.rightCols(w - d) = horiz.rightCols(w - d) || mask.leftCols(w - d);
        horiz.leftCols(w - d) = horiz.leftCols(w - d) || mask.rightCols(w - d);
    }
    Mask out = horiz;
    for (Eigen::Index d = 1; d <= radius && d < h; ++d) {
        out.bottomRows(h - d) = out.bottomRows(h - d) || horiz.topRows(h - d);
        out.topRows(h - d) = out.topRows(h - d) || horiz.bottomRows(h - d);
    }
    return out;
}

Mask object_mask(const tracking::Detection& det, int width, int height) {
    if (det.mask) {
        Mask m = tracking::decode_rle(*det.mask);
        if (m.cols() != width || m.rows() != height) {
            throw GeometryError("object mask geometry does not match keyframe");
        }
        return m;
    }
    Mask m = Mask::Constant(height, width, false);
    const auto& b = det.box;
    m.block(b.y1, b.x1, b.height(), b.width()).setConstant(true);
    return m;
}

std::pair<Point, AnchorSource> anchor_for(const Mask& mask, const tracking::Box& box) {
    const Point center{(box.x1 + box.x2) / 2, (box.y1 + box.y2) / 2};
    long long count = 0, sx = 0, sy = 0;
    for (Eigen::Index y = 0; y < mask.rows(); ++y) {
        for (Eigen::Index x = 0; x < mask.cols(); ++x) {
            if (mask(y, x)) {
                ++count;
                sx += x;
                sy += y;
            }
        }
    }
    if (count == 0) return {center, AnchorSource::box_center};
    const Point c{static_cast<int>(sx / count), static_cast<int>(sy / count)};
    const bool in_box = c.x >= box.x1 && c.x < box.x2 && c.y >= box.y1 && c.y < box.y2;
    if (in_box && mask(c.y, c.x)) return {c, AnchorSource::centroid};
    return {center, AnchorSource::box_center};
}

int label_scale(int width, int height) {
    return std::max(1, std::min(width, height) / 240);
}

int text_width(std::string_view text, int scale) {
    if (text.empty()) return 0;
    const int n = static_cast<int>(text.size());
    return n * 5 * scale + (n - 1) * scale;
}

Point label_extent(int track_id, int scale) {
    const auto text = std::to_string(track_id);
    return {text_width(text, scale) + 2 * scale, 7 * scale + 2 * scale};
}

void draw_text(Raster& img, int x, int y, std::string_view text, int scale, Rgb color,
               std::optional<tracking::Box> clip) {
    int pen = x;
    for (char c : text) {
        const auto* g = detail::glyph_for(c);
        for (int row = 0; row < 7; ++row) {
            for (int col = 0; col < 5; ++col) {
                if (!((*g)[static_cast<std::size_t>(row)] & (0x10 >> col))) continue;
                int x1 = pen + col * scale, y1 = y + row * scale;
                int x2 = x1 + scale, y2 = y1 + scale;
                if (clip) {
                    x1 = std::max(x1, clip->x1);
                    y1 = std::max(y1, clip->y1);
                    x2 = std::min(x2, clip->x2);
                    y2 = std::min(y2, clip->y2);
                }
                img.fill_rect(x1, y1, x2, y2, color);
            }
        }
        pen += 6 * scale;
    }
}

namespace {

bool overlaps(const tracking::Box& a, const tracking::Box& b) {
    return a.x1 < b.x2 && b.x1 < a.x2 && a.y1 < b.y2 && b.y1 < a.y2;
}

void paint(Raster& img, const Mask& where, Rgb color) {
    for (int c = 0; c < 3; ++c) {
        const std::uint8_t v = c == 0 ? color.r : (c == 1 ? color.g : color.b);
        img.channel(c) = where.select(Plane::Constant(where.rows(), where.cols(), v), img.channel(c));
    }
}

}  // namespace

MarkedKeyframe render_marks(const Raster& keyframe, std::span<const tracking::TrackedObject> objects,
                            int keyframe_index) {
    MarkedKeyframe out{keyframe_index, keyframe, {}};
    const int w = keyframe.width(), h = keyframe.height();

    std::vector<const tracking::TrackedObject*> order;
    for (const auto& o : objects) {
        tracking::validate(o.detection, w, h);
        order.push_back(&o);
    }
    std::sort(order.begin(), order.end(), [](const auto* a, const auto* b) { return a->track_id < b->track_id; });

    struct Pending {
        const tracking::TrackedObject* obj;
        Mask mask;
    };
    std::vector<Pending> pending;
    for (const auto* o : order) {
        Mask m = object_mask(o->detection, w, h);
        const Mask boundary = mask_boundary(m);
        const Mask band = dilate(boundary, kStrokeRadius);
        const Mask ring = dilate(boundary, kOutlineRadius) && !band;
        const Rgb color = mark_color(o->track_id);
        paint(out.image, ring, kOutlineColor);
        paint(out.image, band, color);
        pending.push_back({o, std::move(m)});
    }

    // Labels go on top of every stroke.
    const int scale = label_scale(w, h);
    std::vector<tracking::Box> placed;
    for (const auto& p : pending) {
        const auto [anchor, source] = anchor_for(p.mask, p.obj->detection.box);
        const Point ext = label_extent(p.obj->track_id, scale);
        int x1 = std::clamp(anchor.x - ext.x / 2, 0, std::max(0, w - ext.x));
        int y1 = std::clamp(anchor.y - ext.y / 2, 0, std::max(0, h - ext.y));
        tracking::Box label{x1, y1, std::min(w, x1 + ext.x), std::min(h, y1 + ext.y)};
        bool nudged = false;
        auto collides = [&](const tracking::Box& b) {
            return std::any_of(placed.begin(), placed.end(), [&](const auto& q) { return overlaps(b, q); });
        };
        while (collides(label) && label.y1 + ext.y + ext.y <= h) {
            label.y1 += ext.y;
            label.y2 = std::min(h, label.y1 + ext.y);
            nudged = true;
        }
        placed.push_back(label);

        const Rgb color = mark_color(p.obj->track_id);
        out.image.fill_rect(label.x1, label.y1, label.x2, label.y2, color);
        const int luma = (299 * color.r + 587 * color.g + 114 * color.b) / 1000;
        const Rgb ink = luma > 140 ? Rgb{0, 0, 0} : Rgb{255, 255, 255};
        draw_text(out.image, label.x1 + scale, label.y1 + scale, std::to_string(p.obj->track_id), scale, ink,
                  label);
        out.manifest.push_back({p.obj->track_id, anchor, color, label, source, nudged});
    }
    return out;
}

json to_json(const MarkEntry& e) {
    return {{"track_id", e.track_id},
            {"anchor", {e.anchor.x, e.anchor.y}},
            {"color", {e.color.r, e.color.g, e.color.b}},
            {"label_box", {e.label_box.x1, e.label_box.y1, e.label_box.x2, e.label_box.y2}},
            {"anchor_source", e.anchor_source == AnchorSource::centroid ? "centroid" : "box_center"},
            {"nudged", e.nudged}};
}

void write_marks(const std::filesystem::path& path, const std::map<int, std::vector<MarkEntry>>& marks) {
    json j = json::object();
    for (const auto& [kf, entries] : marks) {
        json arr = json::array();
        for (const auto& e : entries) arr.push_back(to_json(e));
        j[std::to_string(kf)] = arr;
    }
    write_json(path, j);
}

}  // namespace glave::marking
