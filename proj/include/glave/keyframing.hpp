// Copyright (C) 2025 The glave authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "glave/error.hpp"
#include "glave/image.hpp"

#include <Eigen/Core>

#include <cmath>
#include <filesystem>
#include <span>
#include <vector>

namespace glave::keyframing {

inline constexpr double kDefaultShotThreshold = 27.0;
inline constexpr int kDefaultMinShotLen = 15;
inline constexpr double kDefaultSimilarityThreshold = 0.85;

struct FrameRecord {
    int index = 0;
    double timestamp = 0.0;
    Raster image;
};

/// Sorted frame indices where a shot begins. Always contains 0.
struct ShotList {
    std::vector<int> cuts;
    friend bool operator==(const ShotList&, const ShotList&) = default;
};

struct Keyframe {
    int frame_index = 0;
    Eigen::VectorXf embedding;
    Raster image;
};

/// Mean hue, saturation and lightness of a frame, each on a [0,255] scale.
struct ChannelStats {
    double hue = 0.0;
    double sat = 0.0;
    double lum = 0.0;
};

template <typename Scalar>
struct HslPlanes {
    Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic> hue, sat, lum;
};

/// Per-pixel RGB -> HSL on [0,255] scales. Hue is degrees * 255/360.
template <typename Scalar = double>
HslPlanes<Scalar> rgb_to_hsl(const Raster& image) {
    using A = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
    const A rn = image.channel(0).template cast<Scalar>() / Scalar(255);
    const A gn = image.channel(1).template cast<Scalar>() / Scalar(255);
    const A bn = image.channel(2).template cast<Scalar>() / Scalar(255);
    const A mx = rn.max(gn).max(bn);
    const A mn = rn.min(gn).min(bn);
    const A delta = mx - mn;
    const A l = (mx + mn) / Scalar(2);

    const A denom = Scalar(1) - (Scalar(2) * l - Scalar(1)).abs();
    const A s = (delta > Scalar(0)).select(delta / denom.max(Scalar(1e-12)), Scalar(0));

    const A safe = delta.max(Scalar(1e-12));
    A hr = (gn - bn) / safe;
    hr = hr - Scalar(6) * (hr / Scalar(6)).floor();
    const A hg = (bn - rn) / safe + Scalar(2);
    const A hb = (rn - gn) / safe + Scalar(4);
    A h = (mx == rn).select(hr, (mx == gn).select(hg, hb));
    h = (delta > Scalar(0)).select(h * Scalar(60), Scalar(0));

    return {h * (Scalar(255) / Scalar(360)), s.min(Scalar(1)) * Scalar(255), l * Scalar(255)};
}

ChannelStats frame_channel_stats(const Raster& image);

/// Mean absolute per-channel difference between two frames' stats.
inline double stats_delta(const ChannelStats& a, const ChannelStats& b) {
    return (std::abs(a.hue - b.hue) + std::abs(a.sat - b.sat) + std::abs(a.lum - b.lum)) / 3.0;
}

ShotList detect_shots(std::span<const ChannelStats> stats, double threshold = kDefaultShotThreshold,
                      int min_shot_len = kDefaultMinShotLen);
ShotList detect_shots(std::span<const FrameRecord> frames, double threshold = kDefaultShotThreshold,
                      int min_shot_len = kDefaultMinShotLen);

/// Keyframe gap guard: round(2 s * sampling fps), never below 1.
int default_max_gap(double sampling_fps);

/// Rows of `embeddings` are per-frame vectors in frame order.
template <typename Derived>
std::vector<int> select_keyframes(const Eigen::MatrixBase<Derived>& embeddings,
                                  double similarity_threshold, int max_gap) {
    if (embeddings.rows() == 0) throw EmptyInputError("select_keyframes: no embeddings");
    if (max_gap < 1) throw PreconditionError("select_keyframes: max_gap must be >= 1");
    if (!(similarity_threshold > 0.0 && similarity_threshold < 1.0)) {
        throw PreconditionError("select_keyframes: similarity threshold must lie in (0,1)");
    }
    std::vector<int> selected{0};
    Eigen::Index last = 0;
    for (Eigen::Index i = 1; i < embeddings.rows(); ++i) {
        const auto a = embeddings.row(i);
        const auto b = embeddings.row(last);
        const double denom = static_cast<double>(a.norm()) * static_cast<double>(b.norm());
        const double cosine = denom > 0.0 ? static_cast<double>(a.dot(b)) / denom : 0.0;
        if (cosine < similarity_threshold || i - last == max_gap) {
            selected.push_back(static_cast<int>(i));
            last = i;
        }
    }
    return selected;
}

/// Checks that every vector has the same dimension, then selects.
std::vector<int> select_keyframes(std::span<const Eigen::VectorXf> embeddings,
                                  double similarity_threshold, int max_gap);

Eigen::MatrixXf stack_rows(std::span<const Eigen::VectorXf> vectors);

void validate(const ShotList& shots, int frame_count);

// Workspace files ----------------------------------------------------------

struct FrameInfo {
    int index = 0;
    double timestamp = 0.0;
    int width = 0;
    int height = 0;
};

std::vector<FrameInfo> read_frame_manifest(const std::filesystem::path& workspace);
std::vector<FrameRecord> load_frames(const std::filesystem::path& workspace);
std::filesystem::path frame_path(const std::filesystem::path& workspace, int index);
void write_frames(const std::filesystem::path& workspace, std::span<const FrameRecord> frames);

void write_shots(const std::filesystem::path& path, const ShotList& shots);
ShotList read_shots(const std::filesystem::path& path);

struct KeyframeIndex {
    std::vector<int> indices;
    int embedding_dim = 0;
};
void write_keyframes(const std::filesystem::path& path, const KeyframeIndex& kf);
KeyframeIndex read_keyframes(const std::filesystem::path& path);

/// Fixture embeddings aligned with frames.json order: {"dim": d, "vectors": [[...], ...]}.
std::vector<Eigen::VectorXf> read_embeddings(const std::filesystem::path& path);
void write_embeddings(const std::filesystem::path& path, std::span<const Eigen::VectorXf> vectors);

}  // namespace glave::keyframing
