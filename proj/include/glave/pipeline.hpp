// Copyright (C) 2025 The glave authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "glave/config.hpp"
#include "glave/gateway.hpp"
#include "glave/image.hpp"
#include "glave/jsonio.hpp"
#include "glave/keyframing.hpp"
#include "glave/templates.hpp"

#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace glave::caption {

struct OverviewSentence {
    std::string text;
    int start = 1;  // inclusive keyframe range, 1-based
    int end = 1;
};

struct OverviewCaption {
    std::vector<OverviewSentence> sentences;
    /// `[start-end] text` per sentence, the form injected into later prompts.
    std::string render() const;
};

struct LocalCaption {
    int keyframe_index = 0;
    std::string diff_text;
    std::string detail_text;
    std::string merged_text;
    std::vector<int> object_ids_mentioned;
    bool gap = false;  // both streams failed; no caption
};

struct Scene {
    int start = 1;
    int end = 1;
    friend bool operator==(const Scene&, const Scene&) = default;
};
using SceneSegmentation = std::vector<Scene>;

struct SceneCaption {
    int scene_index = 0;  // 1-based
    std::string text;
};

struct VideoCaption {
    std::string text;
    std::vector<std::pair<int, std::size_t>> scene_offsets;  // (scene_index, char_start)
};

/// Inputs for one keyframe: the original image K_i, its marked counterpart
/// M_i and the supplementary object listing S_i.
struct KeyframeView {
    int keyframe_index = 0;
    std::shared_ptr<const Raster> original;
    std::shared_ptr<const Raster> marked;
    std::string supp;
};

/// Stage outcomes in a stable order, written to run_manifest.json.
class RunLog {
public:
    void record(std::string stage, std::optional<int> index, std::string status, std::string detail = {});
    json to_json() const;

private:
    struct Entry {
        std::string stage;
        std::optional<int> index;
        std::string status;
        std::string detail;
    };
    mutable std::mutex mu_;
    std::vector<Entry> entries_;
};

struct StageContext {
    gateway::Gateway& gateway;
    const TemplateLibrary& templates;
    std::string model_name;
    double temperature = 0.0;
    int max_tokens = 2048;
    Features features;
    RunLog* log = nullptr;
};

/// `#<id>` tokens in order of first appearance.
std::vector<int> scan_ids(std::string_view text);

OverviewCaption generate_overview(const StageContext& ctx, std::span<const KeyframeView> keyframes);

/// Differential stream for keyframe i >= 2 against its predecessor.
std::string generate_diff(const StageContext& ctx, const KeyframeView& prev, const KeyframeView& cur,
                          const OverviewCaption* overview);

/// Detail stream: original vs marked keyframe.
std::string generate_detail(const StageContext& ctx, const KeyframeView& cur, const OverviewCaption* overview);

LocalCaption merge_local(const StageContext& ctx, int keyframe_index, const std::optional<std::string>& diff,
                         const std::optional<std::string>& detail, const OverviewCaption* overview);

/// Maps frame-level shot cuts onto keyframes (1-based). Each keyframe joins
/// the shot containing its frame; shots without keyframes vanish.
SceneSegmentation shot_segments(const keyframing::ShotList& shots, std::span<const int> keyframe_frames);

/// Throws ValidationError unless `scenes` is contiguous, covers [1, n] and
/// only uses boundaries that start a segment in `segments`.
void validate_segmentation(const SceneSegmentation& scenes, int n, const SceneSegmentation& segments);

SceneSegmentation adaptive_scene_split(const StageContext& ctx, std::span<const LocalCaption> locals,
                                       const SceneSegmentation& segments, const OverviewCaption* overview);

SceneCaption summarize_scene(const StageContext& ctx, int scene_index, const Scene& scene,
                             std::span<const LocalCaption> locals, const SceneCaption* previous,
                             const OverviewCaption* overview);

VideoCaption assemble_video_caption(std::span<const SceneCaption> scenes);

struct CaptionSet {
    std::optional<OverviewCaption> overview;
    std::vector<LocalCaption> locals;
    SceneSegmentation scenes;
    std::vector<SceneCaption> scene_captions;
    VideoCaption video;
};

/// The full DAG over a prepared workspace: overview, per-keyframe streams and
/// merge (parallel, bounded by fan_out), scene split, sequential scene
/// summaries, assembly. Writes every intermediate artifact and the run manifest.
CaptionSet run_pipeline(const std::filesystem::path& workspace, const RunConfig& config,
                        gateway::Gateway& gateway, const TemplateLibrary& templates);

/// Reads captions/scenes.json and captions/video.txt back.
CaptionSet read_captions(const std::filesystem::path& workspace);

json to_json(const OverviewCaption& o);
json to_json(const LocalCaption& l);

}  // namespace glave::caption
