// Copyright (C) 2025 The glave authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "glave/error.hpp"
#include "glave/image.hpp"
#include "glave/jsonio.hpp"

#include <algorithm>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace glave::tracking {

inline constexpr double kDefaultOverlapThreshold = 0.5;
inline constexpr int kDefaultMaxStale = 3;

/// Half-open pixel box: covers columns [x1, x2) and rows [y1, y2).
template <typename T = int>
struct BoundingBox {
    T x1{}, y1{}, x2{}, y2{};

    T width() const { return x2 - x1; }
    T height() const { return y2 - y1; }
    T area() const { return width() * height(); }
    bool valid() const { return x1 < x2 && y1 < y2; }
    bool within(T image_width, T image_height) const {
        return valid() && x1 >= T(0) && y1 >= T(0) && x2 <= image_width && y2 <= image_height;
    }
    friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

using Box = BoundingBox<int>;

template <typename T>
double iou(const BoundingBox<T>& a, const BoundingBox<T>& b) {
    const T ix = std::max(T(0), std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
    const T iy = std::max(T(0), std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
    const double inter = static_cast<double>(ix) * static_cast<double>(iy);
    const double uni = static_cast<double>(a.area()) + static_cast<double>(b.area()) - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

/// Row-major run-length mask. Runs alternate background/foreground and start
/// with a (possibly empty) background run.
struct MaskRLE {
    int width = 0;
    int height = 0;
    std::vector<int> runs;
    friend bool operator==(const MaskRLE&, const MaskRLE&) = default;
};

MaskRLE encode_rle(const Mask& mask);
Mask decode_rle(const MaskRLE& rle);
void validate(const MaskRLE& rle);

struct Detection {
    Box box;
    std::optional<MaskRLE> mask;
    std::string label;
    double score = 0.0;
};

/// Throws GeometryError when the box or mask do not fit a width x height image.
void validate(const Detection& det, int image_width, int image_height);

struct TrackedObject {
    int track_id = 0;
    Detection detection;
    int keyframe_index = 0;
    // Set when the inherited track last carried a different label.
    bool label_changed = false;
};

struct LiveTrack {
    Detection detection;
    int keyframe_index = 0;
};

struct TrackTable {
    int next_id = 1;
    std::map<int, LiveTrack> live;
};

struct AssignOptions {
    double overlap_threshold = kDefaultOverlapThreshold;
    int max_stale = kDefaultMaxStale;
};

struct AssignResult {
    std::vector<TrackedObject> objects;  // in detection order
    TrackTable table;
};

/// Greedy max-IoU association of one keyframe's detections against the live
/// tracks. Ties go to the lower track id, then the lower detection index.
/// Must be called in keyframe order.
AssignResult assign_ids(std::span<const Detection> detections, const TrackTable& table,
                        int keyframe_index, const AssignOptions& options = {});

/// `#<id> <label> @ [x1,y1,x2,y2] conf=<score>` per object, ascending id.
std::string build_supplementary_text(std::span<const TrackedObject> objects);

// JSON and workspace files ---------------------------------------------------

json to_json(const MaskRLE& rle);
MaskRLE mask_from_json(const json& j);
json to_json(const Detection& det);
Detection detection_from_json(const json& j);
json to_json(const TrackedObject& obj);
TrackedObject tracked_from_json(const json& j, int keyframe_index);

std::vector<Detection> read_detections(const std::filesystem::path& path);
void write_detections(const std::filesystem::path& path, std::span<const Detection> dets);

using TrackMap = std::map<int, std::vector<TrackedObject>>;
void write_tracks(const std::filesystem::path& path, const TrackMap& tracks);
TrackMap read_tracks(const std::filesystem::path& path);

}  // namespace glave::tracking
