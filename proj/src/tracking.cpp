// Copyright (C) 2025 The glave authors
// SPDX-License-Identifier: Apache-2.0

#include "glave/tracking.hpp"

#include <cstdio>
#include <numeric>
#include <tuple>

namespace glave::tracking {

MaskRLE encode_rle(const Mask& mask) {
    MaskRLE rle{static_cast<int>(mask.cols()), static_cast<int>(mask.rows()), {}};
    bool current = false;
    int run = 0;
    // Row-major storage, so data() walks pixels in row-major order.
    const bool* p = mask.data();
    const Eigen::Index n = mask.size();
    for (Eigen::Index i = 0; i < n; ++i) {
        if (p[i] != current) {
            rle.runs.push_back(run);
            run = 0;
            current = p[i];
        }
        ++run;
    }
    rle.runs.push_back(run);
    return rle;
}

void validate(const MaskRLE& rle) {
    if (rle.width <= 0 || rle.height <= 0) throw ValidationError("mask rle: non-positive dimensions");
    long long total = 0;
    for (int r : rle.runs) {
        if (r < 0) throw ValidationError("mask rle: negative run");
        total += r;
    }
    if (total != static_cast<long long>(rle.width) * rle.height) {
        throw ValidationError("mask rle: run lengths sum to " + std::to_string(total) + ", expected " +
                              std::to_string(static_cast<long long>(rle.width) * rle.height));
    }
}

Mask decode_rle(const MaskRLE& rle) {
    validate(rle);
    Mask mask(rle.height, rle.width);
    bool* p = mask.data();
    bool value = false;
    Eigen::Index k = 0;
    for (int r : rle.runs) {
        std::fill(p + k, p + k + r, value);
        k += r;
        value = !value;
    }
    return mask;
}

void validate(const Detection& det, int image_width, int image_height) {
    if (!det.box.within(image_width, image_height)) {
        throw GeometryError("box [" + std::to_string(det.box.x1) + "," + std::to_string(det.box.y1) + "," +
                            std::to_string(det.box.x2) + "," + std::to_string(det.box.y2) +
                            "] outside " + std::to_string(image_width) + "x" + std::to_string(image_height) +
                            " image");
    }
    if (det.mask) {
        validate(*det.mask);
        if (det.mask->width != image_width || det.mask->height != image_height) {
            throw GeometryError("mask geometry does not match image");
        }
    }
    if (!(det.score >= 0.0 && det.score <= 1.0)) throw ValidationError("detection score outside [0,1]");
}

AssignResult assign_ids(std::span<const Detection> detections, const TrackTable& table,
                        int keyframe_index, const AssignOptions& options) {
    if (detections.empty()) return {{}, table};

    AssignResult result{{}, table};
    auto& live = result.table.live;
    std::erase_if(live, [&](const auto& kv) {
        return keyframe_index - kv.second.keyframe_index > options.max_stale;
    });

    struct Candidate {
        double overlap;
        int track_id;
        std::size_t det;
    };
    std::vector<Candidate> candidates;
    for (std::size_t d = 0; d < detections.size(); ++d) {
        for (const auto& [id, track] : live) {
            const double o = iou(detections[d].box, track.detection.box);
            if (o >= options.overlap_threshold) candidates.push_back({o, id, d});
        }
    }
    std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
        return std::tie(b.overlap, a.track_id, a.det) < std::tie(a.overlap, b.track_id, b.det);
    });

    std::vector<int> assigned(detections.size(), 0);
    std::vector<int> used_tracks;
    for (const auto& c : candidates) {
        if (assigned[c.det] != 0) continue;
        if (std::find(used_tracks.begin(), used_tracks.end(), c.track_id) != used_tracks.end()) continue;
        assigned[c.det] = c.track_id;
        used_tracks.push_back(c.track_id);
    }

    result.objects.reserve(detections.size());
    for (std::size_t d = 0; d < detections.size(); ++d) {
        TrackedObject obj{assigned[d], detections[d], keyframe_index, false};
        if (obj.track_id == 0) {
            obj.track_id = result.table.next_id++;
        } else {
            obj.label_changed = live.at(obj.track_id).detection.label != detections[d].label;
        }
        live[obj.track_id] = LiveTrack{detections[d], keyframe_index};
        result.objects.push_back(std::move(obj));
    }
    return result;
}

std::string build_supplementary_text(std::span<const TrackedObject> objects) {
    std::vector<const TrackedObject*> sorted;
    for (const auto& o : objects) sorted.push_back(&o);
    std::sort(sorted.begin(), sorted.end(),
              [](const TrackedObject* a, const TrackedObject* b) { return a->track_id < b->track_id; });
    std::string out;
    for (const auto* o : sorted) {
        const auto& b = o->detection.box;
        char conf[32];
        std::snprintf(conf, sizeof(conf), "%.2f", o->detection.score);
        if (!out.empty()) out += '\n';
        out += "#" + std::to_string(o->track_id) + " " + o->detection.label + " @ [" +
               std::to_string(b.x1) + "," + std::to_string(b.y1) + "," + std::to_string(b.x2) + "," +
               std::to_string(b.y2) + "] conf=" + conf;
    }
    return out;
}

json to_json(const MaskRLE& rle) {
    return {{"w", rle.width}, {"h", rle.height}, {"runs", rle.runs}};
}

MaskRLE mask_from_json(const json& j) {
    MaskRLE rle{j.at("w").get<int>(), j.at("h").get<int>(), j.at("runs").get<std::vector<int>>()};
    validate(rle);
    return rle;
}

json to_json(const Detection& det) {
    json j{{"box", {det.box.x1, det.box.y1, det.box.x2, det.box.y2}},
           {"label", det.label},
           {"score", det.score}};
    if (det.mask) j["mask_rle"] = to_json(*det.mask);
    return j;
}

Detection detection_from_json(const json& j) {
    const auto b = j.at("box").get<std::vector<int>>();
    if (b.size() != 4) throw FormatError("detection box must have four coordinates");
    Detection det{{b[0], b[1], b[2], b[3]}, std::nullopt, j.at("label").get<std::string>(),
                  j.at("score").get<double>()};
    if (j.contains("mask_rle") && !j.at("mask_rle").is_null()) det.mask = mask_from_json(j.at("mask_rle"));
    if (!det.box.valid()) throw GeometryError("detection box is degenerate");
    return det;
}

json to_json(const TrackedObject& obj) {
    json j = to_json(obj.detection);
    j["track_id"] = obj.track_id;
    j["label_changed"] = obj.label_changed;
    return j;
}

TrackedObject tracked_from_json(const json& j, int keyframe_index) {
    return {j.at("track_id").get<int>(), detection_from_json(j), keyframe_index,
            j.value("label_changed", false)};
}

std::vector<Detection> read_detections(const std::filesystem::path& path) {
    std::vector<Detection> out;
    for (const auto& e : read_json(path)) out.push_back(detection_from_json(e));
    return out;
}

void write_detections(const std::filesystem::path& path, std::span<const Detection> dets) {
    json arr = json::array();
    for (const auto& d : dets) arr.push_back(to_json(d));
    write_json(path, arr);
}

void write_tracks(const std::filesystem::path& path, const TrackMap& tracks) {
    json j = json::object();
    for (const auto& [kf, objs] : tracks) {
        json arr = json::array();
        for (const auto& o : objs) arr.push_back(to_json(o));
        j[std::to_string(kf)] = arr;
    }
    write_json(path, j);
}

TrackMap read_tracks(const std::filesystem::path& path) {
    TrackMap out;
    const json doc = read_json(path);
    for (const auto& [key, arr] : doc.items()) {
        const int kf = std::stoi(key);
        auto& objs = out[kf];
        for (const auto& e : arr) objs.push_back(tracked_from_json(e, kf));
    }
    return out;
}

}  // namespace glave::tracking
