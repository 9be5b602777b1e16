// Copyright (C) 2025 The glave authors
// SPDX-License-Identifier: Apache-2.0

#include "glave/pipeline.hpp"

#include "glave/parallel.hpp"
#include "glave/workspace.hpp"

#include <algorithm>
#include <cctype>

namespace glave::caption {

namespace fs = std::filesystem;
using gateway::ChatRequest;
using gateway::Message;
using gateway::Part;
using gateway::Schema;

namespace {

int stage_rank(const std::string& stage) {
    static const std::vector<std::string> order{"prepare", "overview", "diff",        "detail",         "merge",
                                                "local",   "scene_split", "scene_caption", "assemble"};
    const auto it = std::find(order.begin(), order.end(), stage);
    return it == order.end() ? static_cast<int>(order.size()) : static_cast<int>(it - order.begin());
}

ChatRequest make_request(const StageContext& ctx, std::string tag, std::string prompt,
                         std::vector<std::shared_ptr<const Raster>> images) {
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

void log(const StageContext& ctx, std::string stage, std::optional<int> index, std::string status,
         std::string detail = {}) {
    if (ctx.log) ctx.log->record(std::move(stage), index, std::move(status), std::move(detail));
}

std::string overview_text(const OverviewCaption* overview) {
    return overview ? overview->render() : std::string{};
}

std::set<std::string> disabled_sections(const StageContext& ctx, const OverviewCaption* overview) {
    std::set<std::string> off;
    if (!ctx.features.visual_prompt) off.insert("visual_prompt");
    if (!overview) off.insert("overview");
    return off;
}

std::string render_locals(std::span<const LocalCaption> locals, int start, int end) {
    std::string out;
    for (const auto& l : locals) {
        if (l.keyframe_index < start || l.keyframe_index > end || l.gap) continue;
        if (!out.empty()) out += "\n";
        out += "Keyframe " + std::to_string(l.keyframe_index) + ": " + l.merged_text;
    }
    return out.empty() ? std::string("(no captions available)") : out;
}

std::string render_segments(const SceneSegmentation& s) {
    json arr = json::array();
    for (const auto& sc : s) arr.push_back({sc.start, sc.end});
    return arr.dump();
}

}  // namespace

// RunLog ---------------------------------------------------------------------

void RunLog::record(std::string stage, std::optional<int> index, std::string status, std::string detail) {
    std::lock_guard lock(mu_);
    entries_.push_back({std::move(stage), index, std::move(status), std::move(detail)});
}

json RunLog::to_json() const {
    std::vector<Entry> sorted;
    {
        std::lock_guard lock(mu_);
        sorted = entries_;
    }
    std::stable_sort(sorted.begin(), sorted.end(), [](const Entry& a, const Entry& b) {
        const int ra = stage_rank(a.stage), rb = stage_rank(b.stage);
        if (ra != rb) return ra < rb;
        return a.index.value_or(0) < b.index.value_or(0);
    });
    json out = json::array();
    for (const auto& e : sorted) {
        json j{{"stage", e.stage}, {"status", e.status}};
        if (e.index) j["index"] = *e.index;
        if (!e.detail.empty()) j["detail"] = e.detail;
        out.push_back(std::move(j));
    }
    return out;
}

// Stages -----------------------------------------------------------------------

std::string OverviewCaption::render() const {
    std::string out;
    for (const auto& s : sentences) {
        if (!out.empty()) out += "\n";
        out += "[" + std::to_string(s.start) + "-" + std::to_string(s.end) + "] " + s.text;
    }
    return out;
}

std::vector<int> scan_ids(std::string_view text) {
    std::vector<int> ids;
    for (std::size_t i = 0; i < text.size(); ++i) {
        if (text[i] != '#') continue;
        std::size_t j = i + 1;
        int v = 0;
        while (j < text.size() && std::isdigit(static_cast<unsigned char>(text[j])) && j - i <= 9) {
            v = v * 10 + (text[j] - '0');
            ++j;
        }
        if (j > i + 1 && v > 0 && std::find(ids.begin(), ids.end(), v) == ids.end()) ids.push_back(v);
        i = j - 1;
    }
    return ids;
}

OverviewCaption generate_overview(const StageContext& ctx, std::span<const KeyframeView> keyframes) {
    if (keyframes.empty()) throw EmptyInputError("overview needs at least one keyframe");
    const int n = static_cast<int>(keyframes.size());
    std::vector<std::shared_ptr<const Raster>> images;
    for (const auto& k : keyframes) images.push_back(k.original);
    const auto prompt = ctx.templates.get("overview").render({{"n", std::to_string(n)}});
    const auto schema = Schema::object(
        {{"sentences", Schema::array(Schema::object(
                           {{"text", Schema::string()}, {"range", Schema::array(Schema::integer())}}))}});
    const auto check = [](const json& j) {
        if (j["sentences"].empty()) throw ValidationError("$.sentences: empty overview");
        for (const auto& s : j["sentences"]) {
            if (s["range"].size() != 2) throw ValidationError("$.sentences[].range: expected [start, end]");
        }
    };
    json reply;
    try {
        reply = gateway::complete_structured(ctx.gateway, make_request(ctx, "overview", prompt, images), schema,
                                             check);
    } catch (const FixtureMissingError&) {
        throw;
    } catch (const Error& e) {
        log(ctx, "overview", std::nullopt, "failed", e.what());
        throw StageError(std::string("overview caption failed: ") + e.what());
    }

    OverviewCaption out;
    for (const auto& s : reply["sentences"]) {
        OverviewSentence sent{s["text"].get<std::string>(), s["range"][0].get<int>(), s["range"][1].get<int>()};
        const OverviewSentence raw = sent;
        if (sent.start > sent.end) std::swap(sent.start, sent.end);
        sent.start = std::clamp(sent.start, 1, n);
        sent.end = std::clamp(sent.end, 1, n);
        if (sent.start != raw.start || sent.end != raw.end) {
            log(ctx, "overview", std::nullopt, "clamped",
                "[" + std::to_string(raw.start) + "," + std::to_string(raw.end) + "] -> [" +
                    std::to_string(sent.start) + "," + std::to_string(sent.end) + "]");
        }
        out.sentences.push_back(std::move(sent));
    }
    log(ctx, "overview", std::nullopt, "ok");
    return out;
}

std::string generate_diff(const StageContext& ctx, const KeyframeView& prev, const KeyframeView& cur,
                          const OverviewCaption* overview) {
    if (!prev.original || !cur.original) throw PreconditionError("diff stream: keyframe image missing");
    std::vector<std::shared_ptr<const Raster>> images;
    if (ctx.features.visual_prompt) {
        if (!prev.marked || !cur.marked) {
            throw PreconditionError("diff stream: marked keyframe missing for keyframe " +
                                    std::to_string(prev.marked ? cur.keyframe_index : prev.keyframe_index));
        }
        images = {prev.marked, cur.marked};
    } else {
        images = {prev.original, cur.original};
    }
    const auto prompt = ctx.templates.get("diff").render(
        {{"prev", std::to_string(prev.keyframe_index)},
         {"cur", std::to_string(cur.keyframe_index)},
         {"supp_prev", prev.supp.empty() ? "(none)" : prev.supp},
         {"supp_cur", cur.supp.empty() ? "(none)" : cur.supp},
         {"overview", overview_text(overview)}},
        disabled_sections(ctx, overview));
    return gateway::complete_text(ctx.gateway,
                                  make_request(ctx, "diff:" + std::to_string(cur.keyframe_index), prompt, images));
}

std::string generate_detail(const StageContext& ctx, const KeyframeView& cur, const OverviewCaption* overview) {
    if (!cur.original) throw PreconditionError("detail stream: keyframe image missing");
    std::vector<std::shared_ptr<const Raster>> images{cur.original};
    if (ctx.features.visual_prompt) {
        if (!cur.marked) {
            throw PreconditionError("detail stream: marked keyframe missing for keyframe " +
                                    std::to_string(cur.keyframe_index));
        }
        images.push_back(cur.marked);
    }
    const auto prompt = ctx.templates.get("detail").render(
        {{"cur", std::to_string(cur.keyframe_index)},
         {"supp_cur", cur.supp.empty() ? "(none)" : cur.supp},
         {"overview", overview_text(overview)}},
        disabled_sections(ctx, overview));
    return gateway::complete_text(ctx.gateway,
                                  make_request(ctx, "detail:" + std::to_string(cur.keyframe_index), prompt, images));
}

LocalCaption merge_local(const StageContext& ctx, int keyframe_index, const std::optional<std::string>& diff,
                         const std::optional<std::string>& detail, const OverviewCaption* overview) {
    LocalCaption out;
    out.keyframe_index = keyframe_index;
    out.diff_text = diff.value_or("");
    out.detail_text = detail.value_or("");
    if (!diff && !detail) {
        out.gap = true;
        return out;
    }
    auto off = disabled_sections(ctx, overview);
    if (!diff) off.insert("diff_stream");
    if (!detail) off.insert("detail_stream");
    const auto prompt = ctx.templates.get("merge").render({{"cur", std::to_string(keyframe_index)},
                                                           {"diff", out.diff_text},
                                                           {"detail", out.detail_text},
                                                           {"overview", overview_text(overview)}},
                                                          off);
    out.merged_text =
        gateway::complete_text(ctx.gateway, make_request(ctx, "merge:" + std::to_string(keyframe_index), prompt, {}));
    out.object_ids_mentioned = scan_ids(out.merged_text);
    return out;
}

SceneSegmentation shot_segments(const keyframing::ShotList& shots, std::span<const int> keyframe_frames) {
    SceneSegmentation out;
    int current_shot = -1;
    for (std::size_t i = 0; i < keyframe_frames.size(); ++i) {
        const int f = keyframe_frames[i];
        const auto it = std::upper_bound(shots.cuts.begin(), shots.cuts.end(), f);
        const int shot = static_cast<int>(it - shots.cuts.begin());
        const int kf = static_cast<int>(i) + 1;
        if (out.empty() || shot != current_shot) {
            out.push_back({kf, kf});
            current_shot = shot;
        } else {
            out.back().end = kf;
        }
    }
    return out;
}

void validate_segmentation(const SceneSegmentation& scenes, int n, const SceneSegmentation& segments) {
    if (scenes.empty()) throw ValidationError("scene list is empty");
    int expect = 1;
    for (std::size_t i = 0; i < scenes.size(); ++i) {
        const auto& s = scenes[i];
        const std::string where = "$.scenes[" + std::to_string(i) + "]";
        if (s.start != expect) {
            throw ValidationError(where + ": starts at " + std::to_string(s.start) + ", expected " +
                                  std::to_string(expect));
        }
        if (s.end < s.start) throw ValidationError(where + ": end before start");
        const bool starts_segment =
            std::any_of(segments.begin(), segments.end(), [&](const Scene& g) { return g.start == s.start; });
        const bool ends_segment =
            std::any_of(segments.begin(), segments.end(), [&](const Scene& g) { return g.end == s.end; });
        if (!starts_segment || !ends_segment) {
            throw ValidationError(where + ": boundary splits a shot segment");
        }
        expect = s.end + 1;
    }
    if (expect != n + 1) {
        throw ValidationError("scenes cover 1.." + std::to_string(expect - 1) + ", expected 1.." + std::to_string(n));
    }
}

SceneSegmentation adaptive_scene_split(const StageContext& ctx, std::span<const LocalCaption> locals,
                                       const SceneSegmentation& segments, const OverviewCaption* overview) {
    const int n = static_cast<int>(locals.size());
    if (n == 0) throw EmptyInputError("scene split needs at least one keyframe");
    if (!ctx.features.adaptive_scene_split) {
        log(ctx, "scene_split", std::nullopt, "disabled");
        return {{1, n}};
    }
    validate_segmentation(segments, n, segments);
    if (segments.size() <= 1) {
        log(ctx, "scene_split", std::nullopt, "single_segment");
        return segments;
    }
    auto off = disabled_sections(ctx, overview);
    const auto prompt = ctx.templates.get("scene_split").render({{"n", std::to_string(n)},
                                                                 {"shot_segments", render_segments(segments)},
                                                                 {"locals", render_locals(locals, 1, n)},
                                                                 {"overview", overview_text(overview)}},
                                                                off);
    const auto schema = Schema::object({{"scenes", Schema::array(Schema::array(Schema::integer()))}});
    const auto to_scenes = [](const json& j) {
        SceneSegmentation out;
        for (const auto& p : j["scenes"]) {
            if (p.size() != 2) throw ValidationError("$.scenes[]: expected [start, end]");
            out.push_back({p[0].get<int>(), p[1].get<int>()});
        }
        return out;
    };
    try {
        const auto reply = gateway::complete_structured(
            ctx.gateway, make_request(ctx, "scene_split", prompt, {}), schema,
            [&](const json& j) { validate_segmentation(to_scenes(j), n, segments); });
        log(ctx, "scene_split", std::nullopt, "ok");
        return to_scenes(reply);
    } catch (const FixtureMissingError&) {
        throw;
    } catch (const Error& e) {
        log(ctx, "scene_split", std::nullopt, "fallback", e.what());
        return segments;
    }
}

SceneCaption summarize_scene(const StageContext& ctx, int scene_index, const Scene& scene,
                             std::span<const LocalCaption> locals, const SceneCaption* previous,
                             const OverviewCaption* overview) {
    const bool first = previous == nullptr;
    std::map<std::string, std::string> values{{"start", std::to_string(scene.start)},
                                              {"end", std::to_string(scene.end)},
                                              {"locals", render_locals(locals, scene.start, scene.end)},
                                              {"overview", overview_text(overview)}};
    if (!first) values["prev_scene"] = previous->text;
    const auto prompt = ctx.templates.get(first ? "scene_caption_first" : "scene_caption_rest")
                            .render(values, disabled_sections(ctx, overview));
    try {
        auto text = gateway::complete_text(
            ctx.gateway, make_request(ctx, "scene_caption:" + std::to_string(scene_index), prompt, {}));
        log(ctx, "scene_caption", scene_index, "ok");
        return {scene_index, std::move(text)};
    } catch (const FixtureMissingError&) {
        throw;
    } catch (const Error& e) {
        log(ctx, "scene_caption", scene_index, "failed", e.what());
        throw StageError("scene " + std::to_string(scene_index) + " caption failed: " + e.what());
    }
}

VideoCaption assemble_video_caption(std::span<const SceneCaption> scenes) {
    if (scenes.empty()) throw AssemblyError("no scene captions to assemble");
    VideoCaption out;
    for (std::size_t i = 0; i < scenes.size(); ++i) {
        const auto& s = scenes[i];
        if (s.scene_index != static_cast<int>(i) + 1) {
            throw AssemblyError("scene caption " + std::to_string(i + 1) + " is missing");
        }
        if (s.text.empty()) throw AssemblyError("scene caption " + std::to_string(i + 1) + " is empty");
        if (i > 0) out.text += "\n\n";
        out.scene_offsets.emplace_back(s.scene_index, out.text.size());
        out.text += s.text;
    }
    return out;
}

// Serialization -----------------------------------------------------------------

json to_json(const OverviewCaption& o) {
    json arr = json::array();
    for (const auto& s : o.sentences) arr.push_back({{"text", s.text}, {"range", {s.start, s.end}}});
    return {{"sentences", arr}};
}

json to_json(const LocalCaption& l) {
    return {{"keyframe_index", l.keyframe_index}, {"diff_text", l.diff_text},
            {"detail_text", l.detail_text},       {"merged_text", l.merged_text},
            {"object_ids_mentioned", l.object_ids_mentioned}, {"gap", l.gap}};
}

namespace {

LocalCaption local_from_json(const json& j) {
    LocalCaption l;
    l.keyframe_index = j.at("keyframe_index").get<int>();
    l.diff_text = j.value("diff_text", "");
    l.detail_text = j.value("detail_text", "");
    l.merged_text = j.value("merged_text", "");
    l.object_ids_mentioned = j.value("object_ids_mentioned", std::vector<int>{});
    l.gap = j.value("gap", false);
    return l;
}

json scenes_json(const SceneSegmentation& scenes, std::span<const SceneCaption> captions, const VideoCaption& v) {
    json arr = json::array();
    for (std::size_t i = 0; i < scenes.size(); ++i) {
        arr.push_back({{"scene_index", static_cast<int>(i) + 1},
                       {"start", scenes[i].start},
                       {"end", scenes[i].end},
                       {"text", i < captions.size() ? captions[i].text : ""},
                       {"offset", i < v.scene_offsets.size() ? v.scene_offsets[i].second : 0}});
    }
    return {{"scenes", arr}};
}

// Relative paths keep the manifest identical across workspace copies.
json manifest_config(const RunConfig& config) {
    json j = to_json(config);
    for (const char* key : {"fixture_dir", "cache_dir", "templates_dir"}) {
        if (!j.contains(key) || !j[key].is_string()) continue;
        const fs::path p = j[key].get<std::string>();
        if (p.is_absolute()) j[key] = p.filename().string();
    }
    return j;
}

LocalCaption caption_keyframe(const StageContext& ctx, std::span<const KeyframeView> views, std::size_t i,
                              const OverviewCaption* overview) {
    const int kf = views[i].keyframe_index;
    std::optional<std::string> diff, detail;
    const auto attempt = [&](const char* stage, auto&& fn) -> std::optional<std::string> {
        try {
            auto text = fn();
            log(ctx, stage, kf, "ok");
            return text;
        } catch (const FixtureMissingError&) {
            throw;
        } catch (const Error& e) {
            log(ctx, stage, kf, "failed", e.what());
            return std::nullopt;
        }
    };

    const bool has_prev = i > 0;
    if (ctx.features.dual_stream) {
        if (has_prev) diff = attempt("diff", [&] { return generate_diff(ctx, views[i - 1], views[i], overview); });
        detail = attempt("detail", [&] { return generate_detail(ctx, views[i], overview); });
    } else if (has_prev) {
        diff = attempt("diff", [&] { return generate_diff(ctx, views[i - 1], views[i], overview); });
    } else {
        detail = attempt("detail", [&] { return generate_detail(ctx, views[i], overview); });
    }

    const bool both = diff && detail;
    if (!both) {
        LocalCaption out;
        out.keyframe_index = kf;
        out.diff_text = diff.value_or("");
        out.detail_text = detail.value_or("");
        if (!diff && !detail) {
            out.gap = true;
            log(ctx, "local", kf, "gap");
        } else {
            out.merged_text = diff ? *diff : *detail;
            out.object_ids_mentioned = scan_ids(out.merged_text);
            log(ctx, "local", kf, "single_stream", diff ? "diff" : "detail");
        }
        return out;
    }

    try {
        auto out = merge_local(ctx, kf, diff, detail, overview);
        log(ctx, "merge", kf, "ok");
        return out;
    } catch (const FixtureMissingError&) {
        throw;
    } catch (const Error& e) {
        log(ctx, "merge", kf, "failed", e.what());
        LocalCaption out;
        out.keyframe_index = kf;
        out.diff_text = *diff;
        out.detail_text = *detail;
        out.merged_text = *detail;
        out.object_ids_mentioned = scan_ids(out.merged_text);
        log(ctx, "local", kf, "single_stream", "detail");
        return out;
    }
}

}  // namespace

CaptionSet run_pipeline(const fs::path& ws, const RunConfig& config, gateway::Gateway& gateway,
                        const TemplateLibrary& templates) {
    workspace::ensure_prepared(ws, config);
    const auto views = workspace::load_keyframe_views(ws);
    if (views.empty()) throw StageError("workspace has no keyframes");
    const int n = static_cast<int>(views.size());

    RunLog run_log;
    const StageContext ctx{gateway, templates, config.model_name, config.temperature, config.max_tokens,
                           config.features, &run_log};
    CaptionSet out;

    if (config.features.overview_caption) {
        out.overview = generate_overview(ctx, views);
        write_json(ws / "captions" / "overview.json", to_json(*out.overview));
    } else {
        log(ctx, "overview", std::nullopt, "disabled");
    }
    const OverviewCaption* overview = out.overview ? &*out.overview : nullptr;

    out.locals.resize(views.size());
    parallel_for(views.size(), config.fan_out,
                 [&](std::size_t i) { out.locals[i] = caption_keyframe(ctx, views, i, overview); });
    for (const auto& l : out.locals) {
        write_json(ws / "captions" / "local" / numbered(l.keyframe_index, ".json"), to_json(l));
    }

    const auto shots = keyframing::read_shots(ws / "shots.json");
    const auto kf_frames = workspace::keyframe_frames(ws);
    const auto segments = shot_segments(shots, kf_frames);
    out.scenes = adaptive_scene_split(ctx, out.locals, segments, overview);

    const SceneCaption* previous = nullptr;
    for (std::size_t s = 0; s < out.scenes.size(); ++s) {
        out.scene_captions.push_back(
            summarize_scene(ctx, static_cast<int>(s) + 1, out.scenes[s], out.locals, previous, overview));
        previous = &out.scene_captions.back();
    }

    try {
        out.video = assemble_video_caption(out.scene_captions);
        log(ctx, "assemble", std::nullopt, "ok");
    } catch (const Error& e) {
        log(ctx, "assemble", std::nullopt, "failed", e.what());
        throw;
    }
    write_json(ws / "captions" / "scenes.json", scenes_json(out.scenes, out.scene_captions, out.video));
    write_text(ws / "captions" / "video.txt", out.video.text);

    int gaps = 0;
    for (const auto& l : out.locals) gaps += l.gap ? 1 : 0;
    write_json(ws / "run_manifest.json", {{"config", manifest_config(config)},
                                          {"keyframes", n},
                                          {"scenes", static_cast<int>(out.scenes.size())},
                                          {"gaps", gaps},
                                          {"stages", run_log.to_json()}});
    return out;
}

CaptionSet read_captions(const fs::path& ws) {
    CaptionSet out;
    if (fs::exists(ws / "captions" / "overview.json")) {
        OverviewCaption o;
        const json doc = read_json(ws / "captions" / "overview.json");
        for (const auto& s : doc.at("sentences")) {
            o.sentences.push_back({s.at("text").get<std::string>(), s.at("range")[0].get<int>(),
                                   s.at("range")[1].get<int>()});
        }
        out.overview = std::move(o);
    }
    const auto local_dir = ws / "captions" / "local";
    if (fs::exists(local_dir)) {
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(local_dir)) files.push_back(e.path());
        std::sort(files.begin(), files.end());
        for (const auto& f : files) out.locals.push_back(local_from_json(read_json(f)));
    }
    const auto scenes_path = ws / "captions" / "scenes.json";
    if (!fs::exists(scenes_path)) throw PreconditionError("no captions in workspace; run `glave caption` first");
    const auto j = read_json(scenes_path);
    for (const auto& s : j.at("scenes")) {
        out.scenes.push_back({s.at("start").get<int>(), s.at("end").get<int>()});
        out.scene_captions.push_back({s.at("scene_index").get<int>(), s.at("text").get<std::string>()});
        out.video.scene_offsets.emplace_back(s.at("scene_index").get<int>(), s.at("offset").get<std::size_t>());
    }
    out.video.text = read_text(ws / "captions" / "video.txt");
    return out;
}

}  // namespace glave::caption
