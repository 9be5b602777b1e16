// Copyright (C) 2025 The glave authors
// SPDX-License-Identifier: Apache-2.0

#include "glave/qa.hpp"

#include "glave/keyframing.hpp"
#include "glave/parallel.hpp"
#include "glave/workspace.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>

namespace glave::qa {

namespace fs = std::filesystem;
using gateway::ChatRequest;
using gateway::Message;
using gateway::Part;
using gateway::Schema;

std::string to_string(Level level) { return level == Level::scene ? "scene" : "global"; }

Level parse_level(const std::string& s) {
    if (s == "scene") return Level::scene;
    if (s == "global") return Level::global;
    throw FormatError("unknown QA level '" + s + "'");
}

namespace {

ChatRequest make_request(const QAContext& ctx, std::string tag, std::string prompt,
                         std::vector<std::shared_ptr<const Raster>> images = {}) {
    ChatRequest req;
    req.model_name = ctx.model_name;
    req.temperature = ctx.temperature;
    req.max_tokens = ctx.max_tokens;
    req.tag = std::move(tag);
    Message m;
    m.parts.push_back(Part::of_text(std::move(prompt)));
    for (auto& img : images) m.parts.push_back(Part::of_image(std::move(img)));
    req.messages.push_back(std::move(m));
    return req;
}

void log(const QAContext& ctx, std::string stage, std::optional<int> index, std::string status,
         std::string detail = {}) {
    if (ctx.log) ctx.log->record(std::move(stage), index, std::move(status), std::move(detail));
}

std::string trim(std::string_view s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return std::string(s.substr(a, b - a));
}

// Case, surrounding space and trailing full stops do not make two texts different.
std::string normalized(std::string_view s) {
    std::string t = trim(s);
    while (!t.empty() && t.back() == '.') t.pop_back();
    t = trim(t);
    std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return std::tolower(c); });
    return t;
}

std::string bullet_list(std::span<const std::string> items) {
    std::string out;
    for (const auto& s : items) {
        if (!out.empty()) out += "\n";
        out += "- " + s;
    }
    return out;
}

const Schema& qas_schema() {
    static const Schema s = Schema::object(
        {{"qas", Schema::array(Schema::object(
                     {{"type", Schema::string()}, {"question", Schema::string()}, {"answer", Schema::string()}}))}});
    return s;
}

// Keeps pairs in reply order, subject to the registry and per-type cap.
std::vector<QAPair> capped_pairs(const QAContext& ctx, const json& reply, std::span<const std::string> registry,
                                 int cap, Level level, std::optional<int> scene_index, const std::string& stage) {
    std::map<std::string, int> used;
    std::vector<QAPair> out;
    for (const auto& item : reply["qas"]) {
        const auto qtype = trim(item["type"].get<std::string>());
        const auto question = trim(item["question"].get<std::string>());
        const auto answer = trim(item["answer"].get<std::string>());
        if (std::find(registry.begin(), registry.end(), qtype) == registry.end()) {
            log(ctx, stage, scene_index, "discarded", "unregistered type '" + qtype + "'");
            continue;
        }
        if (question.empty() || answer.empty()) {
            log(ctx, stage, scene_index, "discarded", "empty question or answer");
            continue;
        }
        if (used[qtype] >= cap) {
            log(ctx, stage, scene_index, "discarded", "cap reached for type '" + qtype + "'");
            continue;
        }
        ++used[qtype];
        QAPair p;
        p.level = level;
        p.qtype = qtype;
        p.scene_index = scene_index;
        p.question = question;
        p.answer = answer;
        out.push_back(std::move(p));
    }
    return out;
}

std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

}  // namespace

QAContext make_context(gateway::Gateway& gateway, const TemplateLibrary& templates, const RunConfig& config,
                       caption::RunLog* log) {
    return QAContext{gateway, templates, config.model_name, config.temperature, config.max_tokens, config.fan_out,
                     log};
}

std::vector<QAPair> gen_scene_qas(const QAContext& ctx, const caption::SceneCaption& scene,
                                  std::span<const std::string> registry) {
    if (registry.empty()) throw PreconditionError("scene QA type registry is empty");
    const auto prompt = ctx.templates.get("qa_scene").render({{"scene_index", std::to_string(scene.scene_index)},
                                                              {"scene_caption", scene.text},
                                                              {"types", bullet_list(registry)}});
    json reply;
    try {
        reply = gateway::complete_structured(
            ctx.gateway, make_request(ctx, "qa_scene:" + std::to_string(scene.scene_index), prompt), qas_schema());
    } catch (const ParseError& e) {
        log(ctx, "qa_scene", scene.scene_index, "failed", e.what());
        return {};
    } catch (const ValidationError& e) {
        log(ctx, "qa_scene", scene.scene_index, "failed", e.what());
        return {};
    }
    auto out = capped_pairs(ctx, reply, registry, kMaxPerSceneType, Level::scene, scene.scene_index, "qa_scene");
    log(ctx, "qa_scene", scene.scene_index, "ok", std::to_string(out.size()) + " pairs");
    return out;
}

std::vector<QAPair> gen_global_qas(const QAContext& ctx, const caption::VideoCaption& video,
                                   std::span<const std::string> registry, int per_type) {
    if (registry.empty()) throw PreconditionError("global QA type registry is empty");
    per_type = std::clamp(per_type, 0, kMaxGlobalPerType);
    const auto prompt = ctx.templates.get("qa_global").render({{"video_caption", video.text},
                                                               {"per_type", std::to_string(per_type)},
                                                               {"types", bullet_list(registry)}});
    json reply;
    try {
        reply = gateway::complete_structured(ctx.gateway, make_request(ctx, "qa_global", prompt), qas_schema());
    } catch (const ParseError& e) {
        log(ctx, "qa_global", std::nullopt, "failed", e.what());
        return {};
    } catch (const ValidationError& e) {
        log(ctx, "qa_global", std::nullopt, "failed", e.what());
        return {};
    }
    auto out = capped_pairs(ctx, reply, registry, per_type, Level::global, std::nullopt, "qa_global");
    log(ctx, "qa_global", std::nullopt, "ok", std::to_string(out.size()) + " pairs");
    return out;
}

std::vector<QAPair> refine_qas(const QAContext& ctx, std::span<const QAPair> pairs, int first_id) {
    std::vector<std::vector<QAPair>> refined(pairs.size());
    const auto schema = Schema::object(
        {{"qas", Schema::array(Schema::object({{"source", Schema::integer()},
                                               {"question", Schema::string()},
                                               {"answer", Schema::string()}}))}});
    parallel_for(pairs.size(), ctx.fan_out, [&](std::size_t i) {
        const auto& src = pairs[i];
        const json listing = json::array({{{"id", src.id}, {"question", src.question}, {"answer", src.answer}}});
        const auto prompt = ctx.templates.get("qa_refine").render({{"qa_pairs", listing.dump(2)}});
        json reply;
        try {
            reply = gateway::complete_structured(
                ctx.gateway, make_request(ctx, "qa_refine:" + std::to_string(src.id), prompt), schema);
        } catch (const ParseError& e) {
            log(ctx, "qa_refine", src.id, "passthrough", e.what());
            refined[i] = {src};
            return;
        } catch (const ValidationError& e) {
            log(ctx, "qa_refine", src.id, "passthrough", e.what());
            refined[i] = {src};
            return;
        }
        for (const auto& item : reply["qas"]) {
            const auto question = trim(item["question"].get<std::string>());
            const auto answer = trim(item["answer"].get<std::string>());
            if (item["source"].get<int>() != src.id || question.empty() || answer.empty()) {
                log(ctx, "qa_refine", src.id, "discarded", "unusable refined pair");
                continue;
            }
            QAPair p = src;
            p.question = question;
            p.answer = answer;
            refined[i].push_back(std::move(p));
        }
        if (refined[i].empty()) log(ctx, "qa_refine", src.id, "dropped");
        else if (refined[i].size() > 1) log(ctx, "qa_refine", src.id, "split", std::to_string(refined[i].size()));
    });

    std::vector<QAPair> out;
    int next_id = first_id;
    for (auto& group : refined) {
        for (auto& p : group) {
            p.id = next_id++;
            out.push_back(std::move(p));
        }
    }
    return out;
}

std::vector<QAPair> enforce_count_bounds(const QAContext& ctx, std::vector<QAPair> pairs, std::size_t per_scene_limit,
                                         std::size_t global_limit) {
    std::map<std::optional<int>, std::size_t> used;
    std::vector<QAPair> out;
    for (auto& p : pairs) {
        const std::size_t limit = p.level == Level::scene ? per_scene_limit : global_limit;
        if (used[p.scene_index]++ >= limit) {
            log(ctx, "qa_bounds", p.id, "dropped", "count bound reached");
            continue;
        }
        out.push_back(std::move(p));
    }
    return out;
}

std::array<int, 4> shuffle_order(std::uint64_t seed, int pair_id) {
    std::uint64_t state = seed ^ (static_cast<std::uint64_t>(pair_id) * 0xD1B54A32D192ED03ULL);
    std::array<int, 4> order{0, 1, 2, 3};
    for (int i = 3; i > 0; --i) {
        // Unbiased draw from [0, i] by rejection.
        const std::uint64_t bound = static_cast<std::uint64_t>(i) + 1;
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
        std::uint64_t r;
        do {
            r = splitmix64(state);
        } while (r >= limit);
        std::swap(order[static_cast<std::size_t>(i)], order[r % bound]);
    }
    return order;
}

std::optional<QuestionOptions> gen_options(const QAContext& ctx, const QAPair& pair,
                                           const std::string& context_caption, std::uint64_t seed) {
    const auto schema = Schema::object({{"distractors", Schema::array(Schema::string())}});
    const auto prompt = ctx.templates.get("qa_options").render(
        {{"context", context_caption}, {"question", pair.question}, {"answer", pair.answer}});

    std::vector<std::string> usable;
    for (int attempt = 0; attempt < 2 && usable.size() < 3; ++attempt) {
        auto req = make_request(ctx, "qa_options:" + std::to_string(pair.id), prompt);
        req.sample_index = attempt;  // the second attempt is a fresh sample
        if (attempt > 0) req.tag += ":retry";
        json reply;
        try {
            reply = gateway::complete_structured(ctx.gateway, req, schema);
        } catch (const ParseError& e) {
            log(ctx, "qa_options", pair.id, "failed", e.what());
            continue;
        } catch (const ValidationError& e) {
            log(ctx, "qa_options", pair.id, "failed", e.what());
            continue;
        }
        std::set<std::string> seen{normalized(pair.answer)};
        for (const auto& u : usable) seen.insert(normalized(u));
        for (const auto& d : reply["distractors"]) {
            const auto text = trim(d.get<std::string>());
            if (text.empty() || !seen.insert(normalized(text)).second) continue;
            usable.push_back(text);
            if (usable.size() == 3) break;
        }
        if (usable.size() < 3) log(ctx, "qa_options", pair.id, "regenerate", "too few usable distractors");
    }
    if (usable.size() < 3) {
        log(ctx, "qa_options", pair.id, "dropped", "fewer than 3 usable distractors");
        return std::nullopt;
    }

    const std::array<std::string, 4> source{pair.answer, usable[0], usable[1], usable[2]};
    const auto order = shuffle_order(seed, pair.id);
    QuestionOptions q;
    q.level = pair.level;
    q.qtype = pair.qtype;
    q.scene_index = pair.scene_index;
    q.question = pair.question;
    for (std::size_t k = 0; k < 4; ++k) {
        q.options[k] = source[static_cast<std::size_t>(order[k])];
        if (order[k] == 0) q.correct_index = static_cast<int>(k);
    }
    q.lineage = {{"pair_id", pair.id}, {"source_pair_id", pair.source_id}};
    return q;
}

int disambiguate_hints(std::vector<SceneHint>& hints) {
    std::map<std::string, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < hints.size(); ++i) groups[normalized(hints[i].text)].push_back(i);
    int changed = 0;
    for (const auto& [key, members] : groups) {
        if (members.size() < 2) continue;
        for (std::size_t k = 0; k < members.size(); ++k) {
            auto& h = hints[members[k]].text;
            while (!h.empty() && (h.back() == '.' || std::isspace(static_cast<unsigned char>(h.back())))) h.pop_back();
            h += " (part " + std::to_string(k + 1) + ").";
            ++changed;
        }
    }
    return changed;
}

std::vector<SceneHint> gen_scene_hints(const QAContext& ctx, std::span<const caption::SceneCaption> scenes) {
    if (scenes.empty()) throw PreconditionError("scene hints need at least one scene");
    const auto count = scenes.size();
    std::string listing;
    for (const auto& s : scenes) {
        if (!listing.empty()) listing += "\n\n";
        listing += "Scene " + std::to_string(s.scene_index) + ": " + s.text;
    }
    const auto prompt = ctx.templates.get("scene_hints").render(
        {{"scene_count", std::to_string(count)}, {"scene_captions", listing}});
    const auto schema = Schema::object({{"hints", Schema::array(Schema::string())}});
    const auto check = [count](const json& j) {
        if (j["hints"].size() != count) {
            throw ValidationError("$.hints: expected " + std::to_string(count) + " hints, got " +
                                  std::to_string(j["hints"].size()));
        }
        for (const auto& h : j["hints"]) {
            if (trim(h.get<std::string>()).empty()) throw ValidationError("$.hints[]: empty hint");
        }
    };
    const auto to_hints = [&](const json& j) {
        std::vector<SceneHint> out;
        for (std::size_t i = 0; i < count; ++i) out.push_back({scenes[i].scene_index, trim(j["hints"][i].get<std::string>())});
        return out;
    };
    const auto has_duplicates = [](const std::vector<SceneHint>& hints) {
        std::set<std::string> seen;
        for (const auto& h : hints) {
            if (!seen.insert(normalized(h.text)).second) return true;
        }
        return false;
    };

    auto req = make_request(ctx, "scene_hints", prompt);
    std::vector<SceneHint> hints;
    try {
        const auto reply = gateway::complete_structured(ctx.gateway, req, schema, check);
        hints = to_hints(reply);
        if (count > 1 && has_duplicates(hints)) {
            log(ctx, "scene_hints", std::nullopt, "repair", "duplicate hints");
            Message assistant;
            assistant.role = "assistant";
            assistant.parts.push_back(Part::of_text(reply.dump()));
            Message fix;
            fix.parts.push_back(Part::of_text(
                "Some hints are identical. Rewrite them so that every scene has a different hint. Reply with JSON "
                "only, in the same form."));
            req.messages.push_back(std::move(assistant));
            req.messages.push_back(std::move(fix));
            req.tag = "scene_hints:distinct";
            hints = to_hints(gateway::complete_structured(ctx.gateway, req, schema, check));
        }
    } catch (const ParseError& e) {
        log(ctx, "scene_hints", std::nullopt, "fallback", e.what());
        hints.clear();
    } catch (const ValidationError& e) {
        log(ctx, "scene_hints", std::nullopt, "fallback", e.what());
        hints.clear();
    }
    if (hints.empty()) {
        for (const auto& s : scenes) hints.push_back({s.scene_index, "Scene " + std::to_string(s.scene_index) + "."});
    }
    if (count > 1) {
        if (const int changed = disambiguate_hints(hints); changed > 0) {
            log(ctx, "scene_hints", std::nullopt, "suffixed", std::to_string(changed) + " hints");
        }
    }
    log(ctx, "scene_hints", std::nullopt, "ok");
    return hints;
}

bool passes_filter(double duration_s, int shot_count) {
    return duration_s >= 30.0 && duration_s <= 180.0 && shot_count >= 2 && shot_count <= 10;
}

std::vector<VideoCandidate> filter_videos(std::span<const VideoCandidate> candidates, const QAContext* gate) {
    std::vector<VideoCandidate> kept;
    for (const auto& c : candidates) {
        if (!passes_filter(c.duration_s, c.shot_count)) {
            if (gate) log(*gate, "filter", std::nullopt, "rejected", c.video_id + ": duration or shot count");
            continue;
        }
        if (gate) {
            char duration[32];
            std::snprintf(duration, sizeof duration, "%.1f", c.duration_s);
            const auto prompt = gate->templates.get("video_filter").render(
                {{"duration", duration}, {"shot_count", std::to_string(c.shot_count)}});
            const auto schema = Schema::object({{"keep", Schema::boolean()}, {"reason", Schema::string()}});
            try {
                const auto reply = gateway::complete_structured(
                    gate->gateway, make_request(*gate, "video_filter:" + c.video_id, prompt, c.frames), schema);
                if (!reply["keep"].get<bool>()) {
                    log(*gate, "filter", std::nullopt, "rejected", c.video_id + ": " + reply["reason"].get<std::string>());
                    continue;
                }
            } catch (const ParseError&) {
                log(*gate, "filter", std::nullopt, "rejected", c.video_id + ": gate reply unusable");
                continue;
            } catch (const ValidationError&) {
                log(*gate, "filter", std::nullopt, "rejected", c.video_id + ": gate reply unusable");
                continue;
            }
        }
        kept.push_back(c);
    }
    return kept;
}

VideoCandidate candidate_from_workspace(const fs::path& ws, const std::string& video_id) {
    VideoCandidate c;
    c.video_id = video_id;
    const auto frames = keyframing::read_frame_manifest(ws);
    if (frames.size() >= 2) {
        const double span = frames.back().timestamp - frames.front().timestamp;
        c.duration_s = span + span / static_cast<double>(frames.size() - 1);
    }
    if (fs::exists(ws / "shots.json")) {
        c.shot_count = static_cast<int>(keyframing::read_shots(ws / "shots.json").cuts.size());
    } else {
        c.shot_count = static_cast<int>(
            keyframing::detect_shots(std::span<const keyframing::FrameRecord>(keyframing::load_frames(ws))).cuts.size());
    }
    if (fs::exists(ws / "keyframes.json")) {
        for (int f : workspace::keyframe_frames(ws)) {
            c.frames.push_back(std::make_shared<const Raster>(read_png(keyframing::frame_path(ws, f))));
        }
    }
    return c;
}

std::vector<QuestionOptions> run_qagen(const fs::path& ws, const std::string& video_id, const RunConfig& config,
                                       gateway::Gateway& gateway, const TemplateLibrary& templates) {
    const auto captions = caption::read_captions(ws);
    if (captions.scene_captions.empty()) throw PreconditionError("workspace has no scene captions");
    caption::RunLog log;
    const auto ctx = make_context(gateway, templates, config, &log);

    const auto hints = gen_scene_hints(ctx, captions.scene_captions);
    json hints_json = json::array();
    for (const auto& h : hints) hints_json.push_back(to_json(h));
    write_json(ws / "scene_hints.json", {{"hints", hints_json}});

    std::vector<std::vector<QAPair>> per_scene(captions.scene_captions.size());
    parallel_for(per_scene.size(), config.fan_out, [&](std::size_t s) {
        per_scene[s] = gen_scene_qas(ctx, captions.scene_captions[s], config.scene_qa_types);
    });
    auto global = gen_global_qas(ctx, captions.video, config.global_qa_types, config.global_qa_per_type);

    std::vector<QAPair> generated;
    for (auto& group : per_scene) generated.insert(generated.end(), group.begin(), group.end());
    generated.insert(generated.end(), global.begin(), global.end());
    for (std::size_t i = 0; i < generated.size(); ++i) {
        generated[i].id = static_cast<int>(i) + 1;
        generated[i].source_id = generated[i].id;
    }

    const auto refined = enforce_count_bounds(
        ctx, refine_qas(ctx, generated, static_cast<int>(generated.size()) + 1), config.scene_qa_types.size(),
        config.global_qa_types.size() * static_cast<std::size_t>(std::clamp(config.global_qa_per_type, 0, kMaxGlobalPerType)));

    std::vector<std::optional<QuestionOptions>> built(refined.size());
    parallel_for(refined.size(), config.fan_out, [&](std::size_t i) {
        const auto& p = refined[i];
        const auto& context = p.level == Level::scene
                                  ? captions.scene_captions.at(static_cast<std::size_t>(*p.scene_index - 1)).text
                                  : captions.video.text;
        built[i] = gen_options(ctx, p, context, config.seed);
    });

    std::vector<QuestionOptions> out;
    for (auto& b : built) {
        if (!b) continue;
        auto& q = *b;
        char id[32];
        std::snprintf(id, sizeof id, "%04zu", out.size() + 1);
        q.question_id = video_id + ":" + id;
        q.video_id = video_id;
        if (q.scene_index) q.scene_hint = hints.at(static_cast<std::size_t>(*q.scene_index - 1)).text;
        out.push_back(std::move(q));
    }
    write_qa_jsonl(ws / "qa.jsonl", out);
    write_json(ws / "qa_log.json", {{"video_id", video_id},
                                    {"generated", generated.size()},
                                    {"refined", refined.size()},
                                    {"emitted", out.size()},
                                    {"stages", log.to_json()}});
    return out;
}

json to_json(const QuestionOptions& q) {
    return {{"question_id", q.question_id},
            {"video_id", q.video_id},
            {"level", to_string(q.level)},
            {"qtype", q.qtype},
            {"scene_index", q.scene_index ? json(*q.scene_index) : json(nullptr)},
            {"scene_hint", q.scene_hint},
            {"question", q.question},
            {"options", q.options},
            {"correct_index", q.correct_index},
            {"lineage", q.lineage},
            {"review_status", q.review_status}};
}

QuestionOptions options_from_json(const json& j) {
    QuestionOptions q;
    q.question_id = j.at("question_id").get<std::string>();
    q.video_id = j.at("video_id").get<std::string>();
    q.level = parse_level(j.at("level").get<std::string>());
    q.qtype = j.at("qtype").get<std::string>();
    if (j.contains("scene_index") && !j["scene_index"].is_null()) q.scene_index = j["scene_index"].get<int>();
    q.scene_hint = j.value("scene_hint", "");
    q.question = j.at("question").get<std::string>();
    const auto& opts = j.at("options");
    if (!opts.is_array() || opts.size() != 4) throw FormatError("QA item " + q.question_id + ": need 4 options");
    for (std::size_t k = 0; k < 4; ++k) q.options[k] = opts[k].get<std::string>();
    q.correct_index = j.at("correct_index").get<int>();
    if (q.correct_index < 0 || q.correct_index > 3) {
        throw FormatError("QA item " + q.question_id + ": correct_index out of range");
    }
    if (q.level == Level::scene && !q.scene_index) {
        throw FormatError("QA item " + q.question_id + ": scene-level item without scene_index");
    }
    q.lineage = j.value("lineage", json::object());
    q.review_status = j.value("review_status", "unreviewed");
    return q;
}

void write_qa_jsonl(const fs::path& path, std::span<const QuestionOptions> items) {
    std::string text;
    for (const auto& q : items) text += to_json(q).dump() + "\n";
    write_text(path, text);
}

std::vector<QuestionOptions> read_qa_jsonl(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot read " + path.string());
    std::vector<QuestionOptions> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        try {
            out.push_back(options_from_json(json::parse(line)));
        } catch (const json::exception& e) {
            throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

json to_json(const SceneHint& h) { return {{"scene_index", h.scene_index}, {"text", h.text}}; }

std::vector<SceneHint> read_scene_hints(const fs::path& path) {
    std::vector<SceneHint> out;
    const json doc = read_json(path);
    for (const auto& h : doc.at("hints")) {
        out.push_back({h.at("scene_index").get<int>(), h.at("text").get<std::string>()});
    }
    return out;
}

}  // namespace glave::qa
