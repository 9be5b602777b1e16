// Copyright (C) 2025 The glave authors
// SPDX-License-Identifier: Apache-2.0

#include "glave/workspace.hpp"

#include <cmath>

namespace glave::workspace {

namespace fs = std::filesystem;

int keyframe_max_gap(const RunConfig& config, std::span<const keyframing::FrameInfo> frames) {
    if (config.keyframe_max_gap > 0) return config.keyframe_max_gap;
    if (frames.size() < 2) return 1;
    const double span_s = frames.back().timestamp - frames.front().timestamp;
    if (span_s <= 0.0) return 1;
    const double fps = static_cast<double>(frames.size() - 1) / span_s;
    return keyframing::default_max_gap(fps);
}

keyframing::KeyframeIndex prepare_keyframes(const fs::path& ws, const RunConfig& config,
                                            expert::ExpertClient* adapter) {
    const auto frames = keyframing::load_frames(ws);
    if (frames.empty()) throw EmptyInputError("workspace has no frames");

    const auto shots = keyframing::detect_shots(std::span<const keyframing::FrameRecord>(frames),
                                                config.shot_threshold, config.min_shot_len);
    keyframing::write_shots(ws / "shots.json", shots);

    std::vector<Eigen::VectorXf> embeddings;
    if (fs::exists(ws / "embeddings.json") || adapter == nullptr) {
        embeddings = keyframing::read_embeddings(ws / "embeddings.json");
    } else {
        for (const auto& f : frames) embeddings.push_back(adapter->embed(f.image));
        keyframing::write_embeddings(ws / "embeddings.json", embeddings);
    }
    if (embeddings.size() != frames.size()) {
        throw DimensionError("embeddings.json has " + std::to_string(embeddings.size()) + " vectors for " +
                             std::to_string(frames.size()) + " frames");
    }

    std::vector<keyframing::FrameInfo> infos;
    for (const auto& f : frames) infos.push_back({f.index, f.timestamp, f.image.width(), f.image.height()});
    const auto rows = keyframing::select_keyframes(std::span<const Eigen::VectorXf>(embeddings),
                                                   config.keyframe_similarity, keyframe_max_gap(config, infos));

    keyframing::KeyframeIndex index{{}, static_cast<int>(embeddings.front().size())};
    for (int r : rows) index.indices.push_back(frames[static_cast<std::size_t>(r)].index);
    keyframing::write_keyframes(ws / "keyframes.json", index);
    return index;
}

std::vector<int> keyframe_frames(const fs::path& ws) {
    return keyframing::read_keyframes(ws / "keyframes.json").indices;
}

tracking::TrackMap prepare_tracks(const fs::path& ws, const RunConfig& config, expert::ExpertClient* adapter) {
    const auto frames = keyframe_frames(ws);
    tracking::TrackTable table;
    tracking::TrackMap out;
    const tracking::AssignOptions options{config.overlap_threshold, config.max_stale};
    for (std::size_t i = 0; i < frames.size(); ++i) {
        const int kf = static_cast<int>(i) + 1;
        const auto det_path = ws / "detections" / numbered(kf, ".json");
        const Raster image = read_png(keyframing::frame_path(ws, frames[i]));
        std::vector<tracking::Detection> dets;
        if (fs::exists(det_path)) {
            dets = tracking::read_detections(det_path);
        } else if (adapter) {
            dets = adapter->detect(image, config.detect_queries, config.box_threshold);
            tracking::write_detections(det_path, dets);
        }
        for (const auto& d : dets) tracking::validate(d, image.width(), image.height());
        auto result = tracking::assign_ids(dets, table, kf, options);
        table = std::move(result.table);
        out[kf] = std::move(result.objects);
    }
    if (adapter) {
        // Optional refinement pass; ids stay ours.
        const auto refined = adapter->track_update(out);
        for (auto& [kf, objects] : out) {
            for (auto& o : objects) o.detection.mask = refined.at(kf).at(o.track_id);
        }
    }
    tracking::write_tracks(ws / "tracks.json", out);
    return out;
}

std::map<int, std::vector<marking::MarkEntry>> prepare_marks(const fs::path& ws) {
    const auto frames = keyframe_frames(ws);
    const auto tracks = tracking::read_tracks(ws / "tracks.json");
    std::map<int, std::vector<marking::MarkEntry>> manifest;
    for (std::size_t i = 0; i < frames.size(); ++i) {
        const int kf = static_cast<int>(i) + 1;
        const Raster image = read_png(keyframing::frame_path(ws, frames[i]));
        const auto it = tracks.find(kf);
        const std::vector<tracking::TrackedObject> none;
        const auto& objects = it == tracks.end() ? none : it->second;
        auto marked = marking::render_marks(image, objects, kf);
        write_png(ws / "marked" / numbered(kf, ".png"), marked.image);
        manifest[kf] = std::move(marked.manifest);
    }
    marking::write_marks(ws / "marks.json", manifest);
    return manifest;
}

void ensure_prepared(const fs::path& ws, const RunConfig& config, expert::ExpertClient* adapter) {
    if (!fs::exists(ws / "keyframes.json") || !fs::exists(ws / "shots.json")) {
        prepare_keyframes(ws, config, adapter);
    }
    if (!fs::exists(ws / "tracks.json")) prepare_tracks(ws, config, adapter);
    if (!fs::exists(ws / "marks.json")) prepare_marks(ws);
}

std::vector<caption::KeyframeView> load_keyframe_views(const fs::path& ws) {
    const auto frames = keyframe_frames(ws);
    const auto tracks = tracking::read_tracks(ws / "tracks.json");
    std::vector<caption::KeyframeView> views;
    for (std::size_t i = 0; i < frames.size(); ++i) {
        const int kf = static_cast<int>(i) + 1;
        caption::KeyframeView v;
        v.keyframe_index = kf;
        v.original = std::make_shared<const Raster>(read_png(keyframing::frame_path(ws, frames[i])));
        const auto marked_path = ws / "marked" / numbered(kf, ".png");
        if (fs::exists(marked_path)) v.marked = std::make_shared<const Raster>(read_png(marked_path));
        if (const auto it = tracks.find(kf); it != tracks.end()) {
            v.supp = tracking::build_supplementary_text(it->second);
        }
        views.push_back(std::move(v));
    }
    return views;
}

}  // namespace glave::workspace
