// Copyright (C) 2025 The glave authors
// SPDX-License-Identifier: Apache-2.0

#include "glave/cli.hpp"

#include "glave/eval.hpp"
#include "glave/expert_client.hpp"
#include "glave/pipeline.hpp"
#include "glave/qa.hpp"
#include "glave/templates.hpp"
#include "glave/workspace.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <iostream>
#include <map>
#include <sstream>

namespace glave::cli {

namespace fs = std::filesystem;

json flag_value(const std::string& key, const std::string& text) {
    static const json defaults = to_json(RunConfig{});
    if (!defaults.contains(key)) throw ConfigError("unknown config key '" + key + "'");
    const auto& d = defaults[key];
    try {
        if (d.is_boolean()) {
            std::string t = text;
            std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return std::tolower(c); });
            if (t == "true" || t == "1" || t == "on" || t == "yes") return true;
            if (t == "false" || t == "0" || t == "off" || t == "no") return false;
            throw ConfigError("");
        }
        std::size_t used = 0;
        if (d.is_number_unsigned()) {
            if (!text.empty() && text[0] == '-') throw ConfigError("");
            const auto v = std::stoull(text, &used);
            if (used != text.size()) throw ConfigError("");
            return v;
        }
        if (d.is_number_integer()) {
            const auto v = std::stoll(text, &used);
            if (used != text.size()) throw ConfigError("");
            return v;
        }
        if (d.is_number()) {
            const auto v = std::stod(text, &used);
            if (used != text.size()) throw ConfigError("");
            return v;
        }
        if (d.is_array()) {
            json arr = json::array();
            std::stringstream ss(text);
            for (std::string item; std::getline(ss, item, ',');) {
                if (!item.empty()) arr.push_back(item);
            }
            return arr;
        }
        return text;
    } catch (const std::exception&) {
        throw ConfigError("invalid value '" + text + "' for --" + key);
    }
}

fs::path resolve(const std::string& path, const fs::path& base) {
    const fs::path p = path;
    return p.is_absolute() ? p : base / p;
}

std::unique_ptr<gateway::Gateway> make_gateway(const RunConfig& config, const fs::path& base) {
    gateway::GatewayOptions opts;
    opts.transport = gateway::parse_transport(config.transport);
    opts.fixture_dir = resolve(config.fixture_dir, base);
    if (!config.cache_dir.empty()) opts.cache_dir = resolve(config.cache_dir, base);
    opts.max_inflight = config.max_inflight;
    opts.max_retries = config.max_retries;
    opts.seed = config.seed;
    std::shared_ptr<gateway::Backend> backend;
    if (opts.transport != gateway::Transport::replay) {
        backend = std::make_shared<gateway::HttpBackend>(
            gateway::HttpBackendOptions{config.endpoint, config.api_key, config.image_max_side, 120});
    }
    return std::make_unique<gateway::Gateway>(std::move(opts), std::move(backend));
}

VerifyResult verify_fixtures(const fs::path& dir) {
    VerifyResult result;
    if (!fs::is_directory(dir)) {
        result.problems.push_back(dir.string() + ": not a directory");
        return result;
    }
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.path().extension() == ".json") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
        ++result.checked;
        try {
            const auto j = read_json(f);
            const auto recomputed = gateway::key_of_canonical(j.at("request"));
            const auto stored = j.at("key").get<std::string>();
            if (stored != recomputed) {
                result.problems.push_back(f.filename().string() + ": stored key " + stored + " != recomputed " +
                                          recomputed);
            } else if (f.stem().string() != recomputed) {
                result.problems.push_back(f.filename().string() + ": file name does not match key " + recomputed);
            }
            if (!j.contains("response") || !j["response"].contains("text") || !j["response"]["text"].is_string()) {
                result.problems.push_back(f.filename().string() + ": no response text");
            }
        } catch (const std::exception& e) {
            result.problems.push_back(f.filename().string() + ": " + e.what());
        }
    }
    return result;
}

namespace {

struct Common {
    std::string workspace = ".";
    std::string config_path;
    bool replay = false;
    std::map<std::string, std::string> flags;
};

std::string kebab(std::string s) {
    std::replace(s.begin(), s.end(), '_', '-');
    return s;
}

RunConfig load(const Common& c, fs::path& base) {
    json overrides = json::object();
    for (const auto& [key, text] : c.flags) overrides[key] = flag_value(key, text);
    if (c.replay) overrides["transport"] = "replay";
    std::optional<fs::path> path;
    if (!c.config_path.empty()) {
        path = fs::path(c.config_path);
        base = fs::absolute(*path).parent_path();
    } else {
        base = fs::current_path();
    }
    return load_config(path, glave_environment(), overrides);
}

TemplateLibrary templates_for(const RunConfig& config, const fs::path& base) {
    return TemplateLibrary::load(config.templates_dir.empty() ? TemplateLibrary::default_dir()
                                                              : resolve(config.templates_dir, base));
}

std::unique_ptr<expert::ExpertClient> adapter_for(const RunConfig& config) {
    if (config.adapter_url.empty()) return nullptr;
    return std::make_unique<expert::ExpertClient>(config.adapter_url);
}

std::string video_id_for(const fs::path& ws, const std::string& given) {
    if (!given.empty()) return given;
    auto p = fs::absolute(ws).lexically_normal();
    if (p.filename().empty()) p = p.parent_path();
    return p.filename().string();
}

}  // namespace

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"glave: caption videos with a multimodal model and build QA benchmarks from the captions", "glave"};
    app.require_subcommand(1, 1);
    app.fallthrough();

    Common common;
    app.add_option("-w,--workspace", common.workspace, "Per-video workspace directory");
    app.add_option("-c,--config", common.config_path, "JSON configuration file");
    app.add_flag("--replay", common.replay, "Serve model replies from recorded fixtures only");
    for (const auto& key : config_keys()) {
        if (key == "api_key") continue;  // GLAVE_API_KEY only
        app.add_option_function<std::string>(
               "--" + kebab(key), [&common, key](const std::string& v) { common.flags[key] = v; },
               "Overrides config key " + key)
            ->group("Configuration overrides");
    }

    auto* keyframes = app.add_subcommand("keyframes", "Detect shots and select keyframes");
    auto* track = app.add_subcommand("track", "Assign persistent object ids across keyframes");
    auto* mark = app.add_subcommand("mark", "Render marked keyframes");
    auto* caption = app.add_subcommand("caption", "Run the captioning pipeline");
    auto* qagen = app.add_subcommand("qagen", "Generate multiple-choice QA from captions");
    std::string video_id;
    qagen->add_option("--video-id", video_id, "Video id recorded in qa.jsonl (default: workspace name)");

    auto* filter = app.add_subcommand("filter", "Filter candidate videos by duration and shot count");
    std::vector<std::string> filter_workspaces;
    std::string candidates_path, filter_out;
    filter->add_option("workspaces", filter_workspaces, "Prepared workspaces to consider");
    filter->add_option("--candidates", candidates_path,
                       "JSON list of {video_id, duration_s, shot_count} to consider");
    filter->add_option("--out", filter_out, "Write the result here instead of standard output");

    auto* evalc = app.add_subcommand("eval", "Judge a caption against the workspace QA");
    std::string method = "glave", caption_path;
    evalc->add_option("--method", method, "Name of the captioning method under evaluation");
    evalc->add_option("--caption", caption_path, "Caption text file (default: captions/video.txt)");

    auto* report = app.add_subcommand("report", "Aggregate evaluation runs into a report");
    std::vector<std::string> report_workspaces;
    std::string plot_path, report_out;
    report->add_option("--method", method, "Method to report on");
    report->add_option("workspaces", report_workspaces, "Additional workspaces to pool");
    report->add_option("--plot", plot_path, "Write a PNG bar chart of per-type accuracy");
    report->add_option("--out", report_out, "Write report.md here (default: eval/<method>/ of the workspace)");

    auto* fixtures = app.add_subcommand("fixtures", "Fixture maintenance");
    fixtures->require_subcommand(1, 1);
    auto* verify = fixtures->add_subcommand("verify", "Check every fixture's key against its request");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "glave: " << e.what() << "\n\n" << app.help();
        return kExitUsage;
    } catch (const ConfigError& e) {
        err << "glave: " << e.what() << "\n";
        return kExitUsage;
    }

    fs::path base;
    RunConfig config;
    try {
        config = load(common, base);
    } catch (const ConfigError& e) {
        err << "glave: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "glave: configuration: " << e.what() << "\n";
        return kExitUsage;
    }
    const fs::path ws = common.workspace;

    try {
        if (keyframes->parsed()) {
            const auto adapter = adapter_for(config);
            const auto index = workspace::prepare_keyframes(ws, config, adapter.get());
            out << index.indices.size() << " keyframes\n";
        } else if (track->parsed()) {
            const auto adapter = adapter_for(config);
            const auto tracks = workspace::prepare_tracks(ws, config, adapter.get());
            std::set<int> ids;
            for (const auto& [kf, objects] : tracks) {
                for (const auto& o : objects) ids.insert(o.track_id);
            }
            out << ids.size() << " tracks over " << tracks.size() << " keyframes\n";
        } else if (mark->parsed()) {
            const auto marks = workspace::prepare_marks(ws);
            out << marks.size() << " marked keyframes\n";
        } else if (caption->parsed()) {
            const auto templates = templates_for(config, base);
            const auto gw = make_gateway(config, base);
            const auto adapter = adapter_for(config);
            workspace::ensure_prepared(ws, config, adapter.get());
            const auto set = caption::run_pipeline(ws, config, *gw, templates);
            out << set.locals.size() << " keyframes, " << set.scenes.size() << " scenes\n";
        } else if (qagen->parsed()) {
            const auto templates = templates_for(config, base);
            const auto gw = make_gateway(config, base);
            const auto items = qa::run_qagen(ws, video_id_for(ws, video_id), config, *gw, templates);
            out << items.size() << " questions\n";
        } else if (filter->parsed()) {
            std::vector<qa::VideoCandidate> candidates;
            if (!candidates_path.empty()) {
                for (const auto& c : read_json(candidates_path)) {
                    candidates.push_back({c.at("video_id").get<std::string>(), c.at("duration_s").get<double>(),
                                          c.at("shot_count").get<int>(), {}});
                }
            }
            for (const auto& w : filter_workspaces) candidates.push_back(qa::candidate_from_workspace(w, video_id_for(w, "")));
            if (candidates.empty()) {
                err << "glave: filter: no candidates (give workspaces or --candidates)\n";
                return kExitUsage;
            }
            std::unique_ptr<gateway::Gateway> gw;
            std::optional<TemplateLibrary> templates;
            std::optional<qa::QAContext> gate;
            caption::RunLog log;
            if (config.quality_gate) {
                templates = templates_for(config, base);
                gw = make_gateway(config, base);
                gate.emplace(qa::make_context(*gw, *templates, config, &log));
            }
            const auto kept = qa::filter_videos(candidates, gate ? &*gate : nullptr);
            json result{{"kept", json::array()}, {"rejected", json::array()}};
            for (const auto& c : candidates) {
                const bool keep = std::any_of(kept.begin(), kept.end(),
                                              [&](const qa::VideoCandidate& k) { return k.video_id == c.video_id; });
                result[keep ? "kept" : "rejected"].push_back(
                    {{"video_id", c.video_id}, {"duration_s", c.duration_s}, {"shot_count", c.shot_count}});
            }
            if (config.quality_gate) result["log"] = log.to_json();
            if (filter_out.empty()) out << result.dump(2) << "\n";
            else write_json(filter_out, result);
        } else if (evalc->parsed()) {
            const auto templates = templates_for(config, base);
            const auto gw = make_gateway(config, base);
            const auto text = read_text(caption_path.empty() ? ws / "captions" / "video.txt" : fs::path(caption_path));
            const auto r = eval::run_eval(ws, method, text, config, *gw, templates);
            out << eval::render_report_markdown(r);
        } else if (report->parsed()) {
            std::vector<fs::path> spaces{ws};
            for (const auto& w : report_workspaces) spaces.emplace_back(w);
            std::vector<qa::QuestionOptions> items;
            std::vector<eval::EvalRecord> records;
            int runs = -1;
            for (const auto& w : spaces) {
                auto q = qa::read_qa_jsonl(w / "qa.jsonl");
                items.insert(items.end(), q.begin(), q.end());
                int r = 0;
                auto recs = eval::read_run_records(w / "eval" / method, r);
                if (runs >= 0 && r != runs) throw ReportError("workspaces disagree on the number of runs");
                runs = r;
                records.insert(records.end(), recs.begin(), recs.end());
            }
            const auto r = eval::aggregate_report(items, records, runs, static_cast<long>(spaces.size()), method);
            const auto md = eval::render_report_markdown(r);
            const auto md_path = report_out.empty() ? ws / "eval" / method / "report.md" : fs::path(report_out);
            write_text(md_path, md);
            if (report_out.empty()) write_json(ws / "eval" / method / "report.json", r);
            if (!plot_path.empty()) write_png(plot_path, eval::render_report_plot(r));
            out << md;
        } else if (verify->parsed()) {
            const auto dir = resolve(config.fixture_dir, base);
            const auto result = verify_fixtures(dir);
            for (const auto& p : result.problems) err << "glave: fixture " << p << "\n";
            out << result.checked << " fixtures checked, " << result.problems.size() << " problems\n";
            return result.problems.empty() ? kExitOk : kExitStage;
        }
    } catch (const FixtureMissingError& e) {
        err << "glave: " << e.what() << "\n";
        return kExitStage;
    } catch (const ConfigError& e) {
        err << "glave: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "glave: " << e.what() << "\n";
        return kExitStage;
    }
    return kExitOk;
}

}  // namespace glave::cli
