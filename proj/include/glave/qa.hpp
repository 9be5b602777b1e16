// Copyright (C) 2025 The glave authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "glave/config.hpp"
#include "glave/gateway.hpp"
#include "glave/pipeline.hpp"
#include "glave/templates.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace glave::qa {

enum class Level { scene, global };
std::string to_string(Level level);
Level parse_level(const std::string& s);

/// Hard caps on generated pairs, enforced regardless of what the model returns.
inline constexpr int kMaxPerSceneType = 1;
inline constexpr int kMaxGlobalPerType = 5;

struct QAPair {
    int id = 0;         // unique within one video's generation run
    int source_id = 0;  // id of the generated pair a refined pair came from (== id before refinement)
    Level level = Level::scene;
    std::string qtype;
    std::optional<int> scene_index;  // scene-level only, 1-based
    std::string question;
    std::string answer;
};

struct QuestionOptions {
    std::string question_id;
    std::string video_id;
    Level level = Level::scene;
    std::string qtype;
    std::optional<int> scene_index;
    std::string scene_hint;
    std::string question;
    std::array<std::string, 4> options;
    int correct_index = 0;
    json lineage;
    std::string review_status = "unreviewed";

    char correct_letter() const { return static_cast<char>('A' + correct_index); }
};

struct SceneHint {
    int scene_index = 0;
    std::string text;
};

struct QAContext {
    gateway::Gateway& gateway;
    const TemplateLibrary& templates;
    std::string model_name;
    double temperature = 0.0;
    int max_tokens = 2048;
    int fan_out = 4;
    caption::RunLog* log = nullptr;
};

QAContext make_context(gateway::Gateway& gateway, const TemplateLibrary& templates, const RunConfig& config,
                       caption::RunLog* log);

/// At most one pair per registered type. Pairs with unregistered or repeated
/// types are discarded and logged; an unparseable reply yields no pairs.
std::vector<QAPair> gen_scene_qas(const QAContext& ctx, const caption::SceneCaption& scene,
                                  std::span<const std::string> registry);

std::vector<QAPair> gen_global_qas(const QAContext& ctx, const caption::VideoCaption& video,
                                   std::span<const std::string> registry, int per_type = kMaxGlobalPerType);

/// Splits compound questions and neutralizes phrasing, one request per pair.
/// Outputs keep level, qtype and scene of their source; a pair whose reply
/// cannot be parsed is passed through unchanged. Output ids are renumbered
/// from `first_id`.
std::vector<QAPair> refine_qas(const QAContext& ctx, std::span<const QAPair> pairs, int first_id = 1);

/// Keeps the first `per_scene_limit` pairs of each scene and the first
/// `global_limit` global pairs; refinement splits may otherwise exceed the
/// generation caps. Dropped pairs are logged.
std::vector<QAPair> enforce_count_bounds(const QAContext& ctx, std::vector<QAPair> pairs, std::size_t per_scene_limit,
                                         std::size_t global_limit);

/// Position of the correct answer after a seeded shuffle: slot k of the
/// returned order holds source option order[k], where source 0 is the answer.
std::array<int, 4> shuffle_order(std::uint64_t seed, int pair_id);

/// Three model distractors plus the answer, shuffled by (seed, pair id).
/// nullopt when three usable distractors cannot be obtained.
std::optional<QuestionOptions> gen_options(const QAContext& ctx, const QAPair& pair,
                                           const std::string& context_caption, std::uint64_t seed);

/// One hint per scene, pairwise distinct.
std::vector<SceneHint> gen_scene_hints(const QAContext& ctx, std::span<const caption::SceneCaption> scenes);

/// Makes duplicate texts distinct by appending " (part k)" to each member of
/// a duplicate group. Returns the number of hints changed.
int disambiguate_hints(std::vector<SceneHint>& hints);

struct VideoCandidate {
    std::string video_id;
    double duration_s = 0.0;
    int shot_count = 0;
    std::vector<std::shared_ptr<const Raster>> frames;  // for the optional quality gate
};

bool passes_filter(double duration_s, int shot_count);

/// Rule filter plus, when `gate` is given, a model quality check per survivor.
std::vector<VideoCandidate> filter_videos(std::span<const VideoCandidate> candidates, const QAContext* gate);

/// Duration and shot count of a prepared workspace.
VideoCandidate candidate_from_workspace(const std::filesystem::path& ws, const std::string& video_id);

/// Full generation over a captioned workspace: hints, scene and global pairs,
/// refinement, options. Writes qa.jsonl, scene_hints.json and qa_log.json.
std::vector<QuestionOptions> run_qagen(const std::filesystem::path& ws, const std::string& video_id,
                                       const RunConfig& config, gateway::Gateway& gateway,
                                       const TemplateLibrary& templates);

json to_json(const QuestionOptions& q);
QuestionOptions options_from_json(const json& j);
void write_qa_jsonl(const std::filesystem::path& path, std::span<const QuestionOptions> items);
std::vector<QuestionOptions> read_qa_jsonl(const std::filesystem::path& path);

json to_json(const SceneHint& h);
std::vector<SceneHint> read_scene_hints(const std::filesystem::path& path);

}  // namespace glave::qa
