// Copyright (C) 2025 The glave authors
// SPDX-License-Identifier: Apache-2.0

#include "glave/keyframing.hpp"

#include "glave/jsonio.hpp"

#include <algorithm>
#include <cmath>

namespace glave::keyframing {

ChannelStats frame_channel_stats(const Raster& image) {
    if (image.empty()) throw DegenerateInputError("frame_channel_stats: zero-area image");
    const auto hsl = rgb_to_hsl<double>(image);
    return {hsl.hue.mean(), hsl.sat.mean(), hsl.lum.mean()};
}

ShotList detect_shots(std::span<const ChannelStats> stats, double threshold, int min_shot_len) {
    if (stats.empty()) throw EmptyInputError("detect_shots: empty frame sequence");
    if (!(threshold > 0.0)) throw PreconditionError("detect_shots: threshold must be > 0");
    if (min_shot_len < 1) throw PreconditionError("detect_shots: min_shot_len must be >= 1");

    ShotList shots{{0}};
    for (std::size_t i = 1; i < stats.size(); ++i) {
        const int idx = static_cast<int>(i);
        if (stats_delta(stats[i - 1], stats[i]) > threshold &&
            idx - shots.cuts.back() >= min_shot_len) {
            shots.cuts.push_back(idx);
        }
    }
    return shots;
}

ShotList detect_shots(std::span<const FrameRecord> frames, double threshold, int min_shot_len) {
    if (frames.empty()) throw EmptyInputError("detect_shots: empty frame sequence");
    std::vector<ChannelStats> stats;
    stats.reserve(frames.size());
    for (const auto& f : frames) stats.push_back(frame_channel_stats(f.image));
    return detect_shots(std::span<const ChannelStats>(stats), threshold, min_shot_len);
}

int default_max_gap(double sampling_fps) {
    return std::max(1, static_cast<int>(std::lround(2.0 * sampling_fps)));
}

Eigen::MatrixXf stack_rows(std::span<const Eigen::VectorXf> vectors) {
    if (vectors.empty()) return {};
    const auto dim = vectors.front().size();
    Eigen::MatrixXf m(static_cast<Eigen::Index>(vectors.size()), dim);
    for (std::size_t i = 0; i < vectors.size(); ++i) {
        if (vectors[i].size() != dim) {
            throw DimensionError("embedding " + std::to_string(i) + " has dimension " +
                                 std::to_string(vectors[i].size()) + ", expected " +
                                 std::to_string(dim));
        }
        m.row(static_cast<Eigen::Index>(i)) = vectors[i].transpose();
    }
    return m;
}

std::vector<int> select_keyframes(std::span<const Eigen::VectorXf> embeddings,
                                  double similarity_threshold, int max_gap) {
    if (embeddings.empty()) throw EmptyInputError("select_keyframes: no embeddings");
    return select_keyframes(stack_rows(embeddings), similarity_threshold, max_gap);
}

void validate(const ShotList& shots, int frame_count) {
    if (shots.cuts.empty() || shots.cuts.front() != 0) {
        throw ValidationError("shot list must start with cut 0");
    }
    for (std::size_t i = 1; i < shots.cuts.size(); ++i) {
        if (shots.cuts[i] <= shots.cuts[i - 1]) throw ValidationError("shot cuts must be strictly increasing");
    }
    if (shots.cuts.back() >= frame_count) throw ValidationError("shot cut beyond frame count");
}

std::filesystem::path frame_path(const std::filesystem::path& workspace, int index) {
    return workspace / "frames" / numbered(index, ".png");
}

std::vector<FrameInfo> read_frame_manifest(const std::filesystem::path& workspace) {
    const auto j = read_json(workspace / "frames.json");
    std::vector<FrameInfo> out;
    for (const auto& e : j.at("frames")) {
        FrameInfo info{e.at("index").get<int>(), e.at("timestamp").get<double>(),
                       e.at("width").get<int>(), e.at("height").get<int>()};
        if (!out.empty()) {
            if (info.index <= out.back().index) throw ValidationError("frames.json: indices must increase");
            if (info.timestamp < out.back().timestamp) throw ValidationError("frames.json: timestamps must not decrease");
        }
        if (info.index < 0 || info.timestamp < 0.0 || info.width <= 0 || info.height <= 0) {
            throw ValidationError("frames.json: invalid frame record");
        }
        out.push_back(info);
    }
    return out;
}

std::vector<FrameRecord> load_frames(const std::filesystem::path& workspace) {
    std::vector<FrameRecord> frames;
    for (const auto& info : read_frame_manifest(workspace)) {
        FrameRecord rec{info.index, info.timestamp, read_png(frame_path(workspace, info.index))};
        if (rec.image.width() != info.width || rec.image.height() != info.height) {
            throw ValidationError("frame " + std::to_string(info.index) + " does not match frames.json geometry");
        }
        frames.push_back(std::move(rec));
    }
    return frames;
}

void write_frames(const std::filesystem::path& workspace, std::span<const FrameRecord> frames) {
    json list = json::array();
    for (const auto& f : frames) {
        write_png(frame_path(workspace, f.index), f.image);
        list.push_back({{"index", f.index},
                        {"timestamp", f.timestamp},
                        {"width", f.image.width()},
                        {"height", f.image.height()}});
    }
    write_json(workspace / "frames.json", {{"frames", list}});
}

void write_shots(const std::filesystem::path& path, const ShotList& shots) {
    write_json(path, {{"cuts", shots.cuts}});
}

ShotList read_shots(const std::filesystem::path& path) {
    return {read_json(path).at("cuts").get<std::vector<int>>()};
}

void write_keyframes(const std::filesystem::path& path, const KeyframeIndex& kf) {
    write_json(path, {{"indices", kf.indices}, {"embedding_dim", kf.embedding_dim}});
}

KeyframeIndex read_keyframes(const std::filesystem::path& path) {
    const auto j = read_json(path);
    return {j.at("indices").get<std::vector<int>>(), j.value("embedding_dim", 0)};
}

std::vector<Eigen::VectorXf> read_embeddings(const std::filesystem::path& path) {
    const auto j = read_json(path);
    const int dim = j.at("dim").get<int>();
    std::vector<Eigen::VectorXf> out;
    for (const auto& row : j.at("vectors")) {
        const auto values = row.get<std::vector<float>>();
        if (static_cast<int>(values.size()) != dim) {
            throw DimensionError("embeddings.json: vector of dimension " + std::to_string(values.size()) +
                                 ", expected " + std::to_string(dim));
        }
        out.emplace_back(Eigen::Map<const Eigen::VectorXf>(values.data(), dim));
    }
    return out;
}

void write_embeddings(const std::filesystem::path& path, std::span<const Eigen::VectorXf> vectors) {
    json rows = json::array();
    for (const auto& v : vectors) rows.push_back(std::vector<float>(v.data(), v.data() + v.size()));
    write_json(path, {{"dim", vectors.empty() ? 0 : vectors.front().size()}, {"vectors", rows}});
}

}  // namespace glave::keyframing
