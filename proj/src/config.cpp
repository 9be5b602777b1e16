// Copyright (C) 2025 The glave authors
// SPDX-License-Identifier: Apache-2.0

#include "glave/config.hpp"

#include <cstdlib>
#include <functional>

namespace glave {

const std::vector<std::string>& default_scene_qa_types() {
    static const std::vector<std::string> types{
        "Spatial",         "Description-Human", "Description-Object",  "Description-Scene",
        "Count",           "Binary",            "Fine-grained action", "Non-existent actions",
        "Attribute change", "Camera direction", "Speed",               "Object direction",
        "Visual-cue"};
    return types;
}

const std::vector<std::string>& default_global_qa_types() {
    static const std::vector<std::string> types{"Temporal", "Causal", "Time order", "Plot"};
    return types;
}

namespace {

using Setter = std::function<void(RunConfig&, const json&)>;

template <typename T>
T as(const json& v, const std::string& key) {
    try {
        if constexpr (std::is_same_v<T, bool>) {
            if (!v.is_boolean()) throw ConfigError("");
        } else if constexpr (std::is_same_v<T, std::string>) {
            if (!v.is_string()) throw ConfigError("");
        } else if constexpr (std::is_integral_v<T>) {
            if (!v.is_number_integer()) throw ConfigError("");
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!v.is_number()) throw ConfigError("");
        }
        return v.get<T>();
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "' has the wrong type");
    }
}

const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> table = [] {
        std::map<std::string, Setter> t;
#define GLAVE_FIELD(name, type) \
    t[#name] = [](RunConfig& c, const json& v) { c.name = as<type>(v, #name); }
#define GLAVE_FEATURE(name) \
    t[#name] = [](RunConfig& c, const json& v) { c.features.name = as<bool>(v, #name); }
        GLAVE_FIELD(endpoint, std::string);
        GLAVE_FIELD(api_key, std::string);
        GLAVE_FIELD(model_name, std::string);
        GLAVE_FIELD(transport, std::string);
        GLAVE_FIELD(fixture_dir, std::string);
        GLAVE_FIELD(cache_dir, std::string);
        GLAVE_FIELD(templates_dir, std::string);
        GLAVE_FIELD(adapter_url, std::string);
        GLAVE_FIELD(shot_threshold, double);
        GLAVE_FIELD(min_shot_len, int);
        GLAVE_FIELD(keyframe_similarity, double);
        GLAVE_FIELD(keyframe_max_gap, int);
        GLAVE_FIELD(overlap_threshold, double);
        GLAVE_FIELD(max_stale, int);
        GLAVE_FIELD(detect_queries, std::vector<std::string>);
        GLAVE_FIELD(box_threshold, double);
        GLAVE_FEATURE(visual_prompt);
        GLAVE_FEATURE(overview_caption);
        GLAVE_FEATURE(dual_stream);
        GLAVE_FEATURE(adaptive_scene_split);
        GLAVE_FIELD(fan_out, int);
        GLAVE_FIELD(max_inflight, int);
        GLAVE_FIELD(max_retries, int);
        GLAVE_FIELD(temperature, double);
        GLAVE_FIELD(max_tokens, int);
        GLAVE_FIELD(image_max_side, int);
        GLAVE_FIELD(seed, std::uint64_t);
        GLAVE_FIELD(scene_qa_types, std::vector<std::string>);
        GLAVE_FIELD(global_qa_types, std::vector<std::string>);
        GLAVE_FIELD(global_qa_per_type, int);
        GLAVE_FIELD(judge_runs, int);
        GLAVE_FIELD(quality_gate, bool);
#undef GLAVE_FIELD
#undef GLAVE_FEATURE
        return t;
    }();
    return table;
}

}  // namespace

const std::vector<std::string>& config_keys() {
    static const std::vector<std::string> keys = [] {
        std::vector<std::string> k;
        for (const auto& [name, _] : setters()) k.push_back(name);
        return k;
    }();
    return keys;
}

void apply_layer(RunConfig& config, const json& layer) {
    if (layer.is_null()) return;
    if (!layer.is_object()) throw ConfigError("configuration must be a JSON object");
    for (const auto& [key, value] : layer.items()) {
        const auto it = setters().find(key);
        if (it == setters().end()) throw ConfigError("unknown config key '" + key + "'");
        it->second(config, value);
    }
}

void validate(const RunConfig& c) {
    auto fail = [](const std::string& key, const std::string& rule) {
        throw ConfigError("config key '" + key + "' out of range: " + rule);
    };
    if (c.transport != "live" && c.transport != "record" && c.transport != "replay") {
        fail("transport", "expected live, record or replay");
    }
    if (!(c.shot_threshold > 0.0)) fail("shot_threshold", "must be > 0");
    if (c.min_shot_len < 1) fail("min_shot_len", "must be >= 1");
    if (!(c.keyframe_similarity > 0.0 && c.keyframe_similarity < 1.0)) fail("keyframe_similarity", "must lie in (0,1)");
    if (c.keyframe_max_gap < 0) fail("keyframe_max_gap", "must be >= 0");
    if (!(c.overlap_threshold > 0.0 && c.overlap_threshold < 1.0)) fail("overlap_threshold", "must lie in (0,1)");
    if (c.max_stale < 0) fail("max_stale", "must be >= 0");
    if (c.detect_queries.empty()) fail("detect_queries", "must not be empty");
    if (!(c.box_threshold >= 0.0 && c.box_threshold <= 1.0)) fail("box_threshold", "must lie in [0,1]");
    if (c.fan_out < 1) fail("fan_out", "must be >= 1");
    if (c.max_inflight < 1) fail("max_inflight", "must be >= 1");
    if (c.max_retries < 0) fail("max_retries", "must be >= 0");
    if (!(c.temperature >= 0.0)) fail("temperature", "must be >= 0");
    if (c.max_tokens < 1) fail("max_tokens", "must be >= 1");
    if (c.image_max_side < 16) fail("image_max_side", "must be >= 16");
    if (c.scene_qa_types.empty()) fail("scene_qa_types", "must not be empty");
    if (c.global_qa_types.empty()) fail("global_qa_types", "must not be empty");
    if (c.global_qa_per_type < 1) fail("global_qa_per_type", "must be >= 1");
    if (c.judge_runs < 1) fail("judge_runs", "must be >= 1");
}

json to_json(const RunConfig& c) {
    return {{"endpoint", c.endpoint},
            {"model_name", c.model_name},
            {"transport", c.transport},
            {"fixture_dir", c.fixture_dir},
            {"cache_dir", c.cache_dir},
            {"templates_dir", c.templates_dir},
            {"adapter_url", c.adapter_url},
            {"shot_threshold", c.shot_threshold},
            {"min_shot_len", c.min_shot_len},
            {"keyframe_similarity", c.keyframe_similarity},
            {"keyframe_max_gap", c.keyframe_max_gap},
            {"overlap_threshold", c.overlap_threshold},
            {"max_stale", c.max_stale},
            {"detect_queries", c.detect_queries},
            {"box_threshold", c.box_threshold},
            {"visual_prompt", c.features.visual_prompt},
            {"overview_caption", c.features.overview_caption},
            {"dual_stream", c.features.dual_stream},
            {"adaptive_scene_split", c.features.adaptive_scene_split},
            {"fan_out", c.fan_out},
            {"max_inflight", c.max_inflight},
            {"max_retries", c.max_retries},
            {"temperature", c.temperature},
            {"max_tokens", c.max_tokens},
            {"image_max_side", c.image_max_side},
            {"seed", c.seed},
            {"scene_qa_types", c.scene_qa_types},
            {"global_qa_types", c.global_qa_types},
            {"global_qa_per_type", c.global_qa_per_type},
            {"judge_runs", c.judge_runs},
            {"quality_gate", c.quality_gate}};
}

RunConfig load_config(const std::optional<std::filesystem::path>& path,
                      const std::map<std::string, std::string>& env, const json& overrides) {
    RunConfig config;
    if (path) {
        if (!std::filesystem::exists(*path)) throw ConfigError("config file not found: " + path->string());
        const auto text = read_text(*path);
        if (text.find_first_not_of(" \t\r\n") != std::string::npos) {
            const auto layer = json::parse(text, nullptr, false);
            if (layer.is_discarded()) throw ConfigError("config file is not valid JSON: " + path->string());
            apply_layer(config, layer);
        }
    }
    json env_layer = json::object();
    if (auto it = env.find("GLAVE_ENDPOINT"); it != env.end()) env_layer["endpoint"] = it->second;
    if (auto it = env.find("GLAVE_API_KEY"); it != env.end()) env_layer["api_key"] = it->second;
    apply_layer(config, env_layer);
    apply_layer(config, overrides);
    validate(config);
    return config;
}

std::map<std::string, std::string> glave_environment() {
    std::map<std::string, std::string> env;
    for (const char* name : {"GLAVE_ENDPOINT", "GLAVE_API_KEY"}) {
        if (const char* v = std::getenv(name)) env[name] = v;
    }
    return env;
}

}  // namespace glave
