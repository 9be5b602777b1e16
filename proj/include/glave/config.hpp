// Copyright (C) 2025 The glave authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "glave/error.hpp"
#include "glave/jsonio.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace glave {

/// Pipeline feature switches. Turning one off reproduces the matching ablation.
struct Features {
    bool visual_prompt = true;
    bool overview_caption = true;
    bool dual_stream = true;
    bool adaptive_scene_split = true;
};

const std::vector<std::string>& default_scene_qa_types();
const std::vector<std::string>& default_global_qa_types();

struct RunConfig {
    // model endpoint
    std::string endpoint = "http://127.0.0.1:8000/v1/chat/completions";
    std::string api_key;  // GLAVE_API_KEY only; never echoed
    std::string model_name = "gpt-4o";
    std::string transport = "live";
    std::string fixture_dir = "fixtures";
    std::string cache_dir;      // empty: in-memory cache only
    std::string templates_dir;  // empty: templates shipped with the build
    std::string adapter_url;    // expert adapter; empty: use workspace fixtures

    // media and tracking
    double shot_threshold = 27.0;
    int min_shot_len = 15;
    double keyframe_similarity = 0.85;
    int keyframe_max_gap = 0;  // 0: round(2 s * sampling fps)
    double overlap_threshold = 0.5;
    int max_stale = 3;
    std::vector<std::string> detect_queries{"person", "animal", "vehicle", "object"};
    double box_threshold = 0.35;

    Features features;

    // execution
    int fan_out = 4;
    int max_inflight = 4;
    int max_retries = 3;
    double temperature = 0.0;
    int max_tokens = 2048;
    int image_max_side = 1024;
    std::uint64_t seed = 0;

    // QA and evaluation
    std::vector<std::string> scene_qa_types = default_scene_qa_types();
    std::vector<std::string> global_qa_types = default_global_qa_types();
    int global_qa_per_type = 5;
    int judge_runs = 3;
    bool quality_gate = false;
};

/// Every key accepted in config files and overrides.
const std::vector<std::string>& config_keys();

/// Applies one configuration layer. Unknown keys and ill-typed values raise
/// ConfigError naming the key.
void apply_layer(RunConfig& config, const json& layer);

/// Throws ConfigError on any out-of-range value.
void validate(const RunConfig& config);

/// Fully resolved configuration; the API key is omitted.
json to_json(const RunConfig& config);

/// Precedence: overrides > environment > file > defaults. `path` may be
/// empty for defaults only; an empty file also yields defaults.
RunConfig load_config(const std::optional<std::filesystem::path>& path,
                      const std::map<std::string, std::string>& env, const json& overrides);

/// GLAVE_ENDPOINT / GLAVE_API_KEY from the process environment.
std::map<std::string, std::string> glave_environment();

}  // namespace glave
