// Copyright (C) 2025 The glave authors
// SPDX-License-Identifier: Apache-2.0

#include "glave/eval.hpp"

#include "glave/marking.hpp"
#include "glave/parallel.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>

namespace glave::eval {

namespace fs = std::filesystem;
using gateway::ChatRequest;
using gateway::Message;
using gateway::Part;

char letter(Choice c) { return static_cast<char>('A' + static_cast<int>(c)); }

Choice choice_from_index(int correct_index) {
    if (correct_index < 0 || correct_index > 3) throw PreconditionError("correct_index must be in 0..3");
    return static_cast<Choice>(correct_index);
}

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

bool is_word(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

std::optional<Choice> option_letter(char c) {
    const char u = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    if (u < 'A' || u > 'E') return std::nullopt;
    return static_cast<Choice>(u - 'A');
}

// A letter that stands alone: at the end, or followed by something other than
// a word character. Lowercase letters also need punctuation or the end.
bool standalone(std::string_view s, std::size_t pos) {
    if (pos + 1 >= s.size()) return true;
    const char next = s[pos + 1];
    if (is_word(next)) return false;
    if (std::islower(static_cast<unsigned char>(s[pos])) && std::isspace(static_cast<unsigned char>(next))) {
        return false;
    }
    return true;
}

// "A or B", "A/B", "A, B": more than one option named up front.
bool names_second_option(std::string_view rest) {
    rest = trim(rest);
    for (std::string_view sep : {"or ", "/", ",", "and "}) {
        if (rest.substr(0, sep.size()) == sep) {
            auto tail = trim(rest.substr(sep.size()));
            if (!tail.empty() && option_letter(tail[0]) && std::isupper(static_cast<unsigned char>(tail[0])) &&
                (tail.size() == 1 || !is_word(tail[1]))) {
                return true;
            }
        }
    }
    return false;
}

Choice leading_letter(std::string_view text) {
    auto t = trim(text);
    if (t.size() >= 6) {
        std::string head(t.substr(0, 6));
        std::transform(head.begin(), head.end(), head.begin(), [](unsigned char c) { return std::tolower(c); });
        if (head == "answer") {
            t.remove_prefix(6);
            t = trim(t);
            if (!t.empty() && (t.front() == ':' || t.front() == '=')) t.remove_prefix(1);
            t = trim(t);
        }
    }
    while (!t.empty() && (t.front() == '(' || t.front() == '[' || t.front() == '*' || t.front() == '"' ||
                          t.front() == '\'')) {
        t.remove_prefix(1);
    }
    if (t.empty()) throw ParseError("judge reply names no option");
    const auto c = option_letter(t[0]);
    if (!c || !standalone(t, 0)) throw ParseError("judge reply does not start with an option letter");
    auto rest = t.substr(1);
    while (!rest.empty() && (rest.front() == ')' || rest.front() == ']' || rest.front() == '*' ||
                             rest.front() == '"' || rest.front() == '\'')) {
        rest.remove_prefix(1);
    }
    if (names_second_option(rest)) throw ParseError("judge reply names more than one option");
    return *c;
}

}  // namespace

Choice parse_verdict(std::string_view text) {
    if (const auto j = gateway::find_first_json(text); j && j->is_object() && j->contains("answer")) {
        const auto& a = (*j)["answer"];
        if (!a.is_string()) throw ParseError("judge reply: \"answer\" is not a string");
        return leading_letter(a.get<std::string>());
    }
    return leading_letter(text);
}

Metrics compute_metrics(const EvalCounts& c) {
    if (c.n_c < 0 || c.n_w < 0 || c.n_e < 0) throw PreconditionError("negative evaluation count");
    Metrics m;
    const long total = c.total();
    const long committed = c.n_c + c.n_w;
    if (total > 0) {
        m.acc = static_cast<double>(c.n_c) / static_cast<double>(total);
        m.nm = static_cast<double>(c.n_e) / static_cast<double>(total);
    }
    if (committed > 0) m.hall = static_cast<double>(c.n_w) / static_cast<double>(committed);
    return m;
}

double qa_per_video(long questions, long videos) {
    return videos > 0 ? static_cast<double>(questions) / static_cast<double>(videos) : 0.0;
}

std::string to_string(ConsistencyClass c) {
    switch (c) {
        case ConsistencyClass::consistent_correct: return "consistent_correct";
        case ConsistencyClass::consistent_wrong: return "consistent_wrong";
        case ConsistencyClass::consistent_not_mentioned: return "consistent_not_mentioned";
        case ConsistencyClass::inconsistent_due_to_E: return "inconsistent_due_to_E";
        case ConsistencyClass::fully_inconsistent: return "fully_inconsistent";
    }
    return "unknown";
}

const std::array<ConsistencyClass, 5>& consistency_classes() {
    static const std::array<ConsistencyClass, 5> all{
        ConsistencyClass::consistent_correct, ConsistencyClass::consistent_wrong,
        ConsistencyClass::consistent_not_mentioned, ConsistencyClass::inconsistent_due_to_E,
        ConsistencyClass::fully_inconsistent};
    return all;
}

std::optional<ConsistencyClass> classify_consistency(const std::array<std::optional<Choice>, 3>& v, Choice gold) {
    if (gold == Choice::E) throw PreconditionError("gold answer must be one of A-D");
    if (!v[0] || !v[1] || !v[2]) return std::nullopt;
    const std::set<Choice> distinct{*v[0], *v[1], *v[2]};
    if (distinct.size() == 1) {
        const Choice c = *v[0];
        if (c == Choice::E) return ConsistencyClass::consistent_not_mentioned;
        return c == gold ? ConsistencyClass::consistent_correct : ConsistencyClass::consistent_wrong;
    }
    if (distinct.size() == 2 && distinct.contains(Choice::E)) return ConsistencyClass::inconsistent_due_to_E;
    return ConsistencyClass::fully_inconsistent;
}

std::vector<qa::SceneHint> neighbor_hints(const qa::QuestionOptions& item, std::span<const qa::SceneHint> hints) {
    std::vector<qa::SceneHint> out;
    if (item.level != qa::Level::scene || !item.scene_index) return out;
    for (const auto& h : hints) {
        if (h.scene_index == *item.scene_index - 1 || h.scene_index == *item.scene_index + 1) out.push_back(h);
    }
    return out;
}

JudgeVerdict judge_question(const JudgeContext& ctx, const std::string& caption, const qa::QuestionOptions& item,
                            std::span<const qa::SceneHint> neighbors, int run) {
    if (trim(caption).empty()) throw PreconditionError("judge: caption is empty");
    if (run < 1) throw PreconditionError("judge: run numbers start at 1");
    const bool scene_level = item.level == qa::Level::scene;
    if (scene_level && item.scene_hint.empty()) {
        throw PreconditionError("judge: scene-level item " + item.question_id + " has no scene hint");
    }

    std::string options;
    for (std::size_t k = 0; k < 4; ++k) {
        options += std::string(1, static_cast<char>('A' + k)) + ". " + item.options[k];
        if (k < 3) options += "\n";
    }
    std::string neighbor_text;
    if (scene_level) {
        for (const auto& h : neighbors) {
            if (!neighbor_text.empty()) neighbor_text += "\n";
            neighbor_text += "- Scene " + std::to_string(h.scene_index) + ": " + h.text;
        }
    }
    std::set<std::string> off;
    if (!scene_level) off.insert("scene_hint");
    if (neighbor_text.empty()) off.insert("neighbor_hints");
    const auto prompt = ctx.templates.get("judge").render({{"caption", caption},
                                                           {"scene_hint", item.scene_hint},
                                                           {"neighbor_hints", neighbor_text},
                                                           {"question", item.question},
                                                           {"options", options}},
                                                          off);

    ChatRequest req;
    req.model_name = ctx.model_name;
    req.temperature = ctx.temperature;
    req.max_tokens = ctx.max_tokens;
    req.sample_index = run - 1;
    req.tag = "judge:" + item.question_id + ":run" + std::to_string(run);
    Message m;
    m.parts.push_back(Part::of_text(prompt));
    req.messages.push_back(std::move(m));

    JudgeVerdict verdict;
    try {
        verdict.raw_text = ctx.gateway.complete(req).text;
        verdict.choice = parse_verdict(verdict.raw_text);
        return verdict;
    } catch (const ParseError&) {
    } catch (const TransportError& e) {
        verdict.raw_text = std::string("transport error: ") + e.what();
        return verdict;
    }

    Message assistant;
    assistant.role = "assistant";
    assistant.parts.push_back(Part::of_text(verdict.raw_text));
    Message fix;
    fix.parts.push_back(Part::of_text(
        "Your reply did not name exactly one option. Reply with JSON only: {\"answer\": \"<A, B, C, D or E>\"}"));
    req.messages.push_back(std::move(assistant));
    req.messages.push_back(std::move(fix));
    req.tag += ":repair";
    try {
        verdict.raw_text = ctx.gateway.complete(req).text;
        verdict.choice = parse_verdict(verdict.raw_text);
    } catch (const ParseError&) {
        verdict.choice.reset();
    } catch (const TransportError& e) {
        verdict.raw_text = std::string("transport error: ") + e.what();
    }
    return verdict;
}

json to_json(const EvalRecord& r) {
    return {{"question_id", r.question_id},
            {"choice", r.choice ? json(std::string(1, letter(*r.choice))) : json(nullptr)},
            {"raw_text", r.raw_text}};
}

EvalRecord record_from_json(const json& j, int run) {
    EvalRecord r;
    r.question_id = j.at("question_id").get<std::string>();
    r.run = run;
    if (j.contains("choice") && !j["choice"].is_null()) {
        const auto s = j["choice"].get<std::string>();
        const auto c = s.size() == 1 ? option_letter(s[0]) : std::nullopt;
        if (!c || !std::isupper(static_cast<unsigned char>(s[0]))) throw FormatError("bad choice '" + s + "'");
        r.choice = *c;
    }
    r.raw_text = j.value("raw_text", "");
    return r;
}

namespace {

json metrics_json(const Metrics& m) { return {{"acc", m.acc}, {"hall", m.hall}, {"nm", m.nm}}; }
json counts_json(const EvalCounts& c) { return {{"n_c", c.n_c}, {"n_w", c.n_w}, {"n_e", c.n_e}}; }

void tally(EvalCounts& c, Choice choice, Choice gold) {
    if (choice == Choice::E) ++c.n_e;
    else if (choice == gold) ++c.n_c;
    else ++c.n_w;
}

std::string pct(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v * 100.0);
    return buf;
}

}  // namespace

json aggregate_report(std::span<const qa::QuestionOptions> items, std::span<const EvalRecord> records, int runs,
                      long videos, const std::string& method) {
    if (runs < 1) throw ReportError("report needs at least one run");
    std::map<std::string, const qa::QuestionOptions*> by_id;
    for (const auto& q : items) {
        if (!by_id.emplace(q.question_id, &q).second) throw ReportError("duplicate question id " + q.question_id);
    }
    std::map<std::string, std::vector<const EvalRecord*>> per_question;
    for (const auto& r : records) {
        if (!by_id.contains(r.question_id)) throw ReportError("record for unknown question " + r.question_id);
        if (r.run < 1 || r.run > runs) {
            throw ReportError("record for " + r.question_id + " has run " + std::to_string(r.run));
        }
        per_question[r.question_id].push_back(&r);
    }
    for (const auto& q : items) {
        auto& rs = per_question[q.question_id];
        std::sort(rs.begin(), rs.end(), [](const EvalRecord* a, const EvalRecord* b) { return a->run < b->run; });
        bool ok = static_cast<int>(rs.size()) == runs;
        for (int k = 0; ok && k < runs; ++k) ok = rs[static_cast<std::size_t>(k)]->run == k + 1;
        if (!ok) {
            throw ReportError("question " + q.question_id + " has " + std::to_string(rs.size()) + " records for " +
                              std::to_string(runs) + " runs");
        }
    }

    std::vector<EvalCounts> per_run(static_cast<std::size_t>(runs));
    std::vector<long> failures(static_cast<std::size_t>(runs), 0);
    std::map<std::string, EvalCounts> per_qtype;
    std::map<std::string, long> per_qtype_questions;
    std::map<std::string, long> histogram;
    for (const auto c : consistency_classes()) histogram[to_string(c)] = 0;
    long unclassifiable = 0;

    for (const auto& q : items) {
        const Choice gold = choice_from_index(q.correct_index);
        const auto& rs = per_question[q.question_id];
        ++per_qtype_questions[q.qtype];
        for (const auto* r : rs) {
            const auto k = static_cast<std::size_t>(r->run - 1);
            if (!r->choice) {
                ++failures[k];
                continue;
            }
            tally(per_run[k], *r->choice, gold);
            tally(per_qtype[q.qtype], *r->choice, gold);
        }
        if (runs == 3) {
            const auto cls = classify_consistency({rs[0]->choice, rs[1]->choice, rs[2]->choice}, gold);
            if (cls) ++histogram[to_string(*cls)];
            else ++unclassifiable;
        }
    }

    json report;
    report["method"] = method;
    report["runs"] = runs;
    json run_list = json::array();
    Metrics mean;
    EvalCounts pooled;
    long total_failures = 0;
    for (int k = 0; k < runs; ++k) {
        const auto& c = per_run[static_cast<std::size_t>(k)];
        const auto m = compute_metrics(c);
        mean.acc += m.acc / runs;
        mean.hall += m.hall / runs;
        mean.nm += m.nm / runs;
        pooled += c;
        total_failures += failures[static_cast<std::size_t>(k)];
        run_list.push_back({{"run", k + 1},
                            {"counts", counts_json(c)},
                            {"judge_failures", failures[static_cast<std::size_t>(k)]},
                            {"metrics", metrics_json(m)}});
    }
    report["per_run"] = run_list;
    report["mean_of_runs"] = metrics_json(mean);
    report["pooled"] = {{"counts", counts_json(pooled)}, {"metrics", metrics_json(compute_metrics(pooled))}};
    const long judged = static_cast<long>(items.size()) * runs;
    report["judge_failures"] = {{"count", total_failures},
                                {"rate", judged > 0 ? static_cast<double>(total_failures) / judged : 0.0}};
    if (runs == 3) {
        json h = histogram;
        h["unclassifiable"] = unclassifiable;
        report["consistency"] = h;
    } else {
        report["consistency"] = nullptr;
    }
    json qt = json::object();
    for (const auto& [name, n] : per_qtype_questions) {
        const auto c = per_qtype[name];
        qt[name] = {{"questions", n}, {"counts", counts_json(c)}, {"metrics", metrics_json(compute_metrics(c))}};
    }
    report["per_qtype"] = qt;
    report["summary"] = {{"videos", videos},
                         {"questions", static_cast<long>(items.size())},
                         {"qa_per_video", qa_per_video(static_cast<long>(items.size()), videos)}};
    return report;
}

std::string render_report_markdown(const json& r) {
    const auto row = [](const std::string& label, const json& m) {
        return "| " + label + " | " + pct(m["acc"].get<double>()) + " | " + pct(m["hall"].get<double>()) + " | " +
               pct(m["nm"].get<double>()) + " |\n";
    };
    std::string md;
    const auto method = r.value("method", std::string{});
    md += "# Evaluation report" + (method.empty() ? std::string{} : ": " + method) + "\n\n";
    md += "| | Acc | Hall | N.M. |\n|---|---|---|---|\n";
    md += row("Mean of " + std::to_string(r["runs"].get<int>()) + " runs", r["mean_of_runs"]);
    md += row("Pooled counts", r["pooled"]["metrics"]);
    for (const auto& run : r["per_run"]) md += row("Run " + std::to_string(run["run"].get<int>()), run["metrics"]);

    char buf[160];
    const auto& jf = r["judge_failures"];
    std::snprintf(buf, sizeof buf, "\nJudge failures: %ld (%.2f%% of judged answers)\n", jf["count"].get<long>(),
                  jf["rate"].get<double>() * 100.0);
    md += buf;

    if (!r["consistency"].is_null()) {
        md += "\n## Consistency across runs\n\n| Class | Questions |\n|---|---|\n";
        for (const auto c : consistency_classes()) {
            md += "| " + to_string(c) + " | " + std::to_string(r["consistency"][to_string(c)].get<long>()) + " |\n";
        }
        md += "| unclassifiable | " + std::to_string(r["consistency"]["unclassifiable"].get<long>()) + " |\n";
    }

    md += "\n## Per question type\n\n| Type | Questions | Acc | Hall | N.M. |\n|---|---|---|---|---|\n";
    for (const auto& [name, v] : r["per_qtype"].items()) {
        const auto& m = v["metrics"];
        md += "| " + name + " | " + std::to_string(v["questions"].get<long>()) + " | " + pct(m["acc"].get<double>()) +
              " | " + pct(m["hall"].get<double>()) + " | " + pct(m["nm"].get<double>()) + " |\n";
    }

    const auto& s = r["summary"];
    std::snprintf(buf, sizeof buf, "\nVideos: %ld, questions: %ld, QA per video: %.2f\n", s["videos"].get<long>(),
                  s["questions"].get<long>(), s["qa_per_video"].get<double>());
    md += buf;
    return md;
}

Raster render_report_plot(const json& r) {
    constexpr int kScale = 2, kRow = 22, kMargin = 10, kBarMax = 300;
    std::vector<std::pair<std::string, double>> bars;
    for (const auto& [name, v] : r["per_qtype"].items()) {
        std::string label = name;
        std::transform(label.begin(), label.end(), label.begin(), [](unsigned char c) { return std::toupper(c); });
        bars.emplace_back(label, v["metrics"]["acc"].get<double>());
    }
    int label_w = 0;
    for (const auto& [label, acc] : bars) label_w = std::max(label_w, marking::text_width(label, kScale));
    const int value_w = marking::text_width("100.00%", kScale);
    const int width = kMargin * 4 + label_w + kBarMax + value_w;
    const int height = kMargin * 2 + kRow * std::max<int>(1, static_cast<int>(bars.size()));
    Raster img(width, height, Rgb{255, 255, 255});
    for (std::size_t i = 0; i < bars.size(); ++i) {
        const auto& [label, acc] = bars[i];
        const int y = kMargin + static_cast<int>(i) * kRow;
        marking::draw_text(img, kMargin, y + 4, label, kScale, Rgb{0, 0, 0});
        const int x0 = kMargin * 2 + label_w;
        const int len = static_cast<int>(std::lround(std::clamp(acc, 0.0, 1.0) * kBarMax));
        img.fill_rect(x0, y + 2, x0 + len, y + kRow - 2, marking::mark_color(static_cast<int>(i) + 1));
        img.fill_rect(x0 + len, y + kRow - 3, x0 + kBarMax, y + kRow - 2, Rgb{200, 200, 200});
        marking::draw_text(img, x0 + kBarMax + kMargin, y + 4, pct(acc) + "%", kScale, Rgb{0, 0, 0});
    }
    return img;
}

std::vector<EvalRecord> read_run_records(const fs::path& dir, int& runs) {
    std::vector<EvalRecord> out;
    runs = 0;
    for (int k = 1;; ++k) {
        const auto path = dir / ("run" + std::to_string(k) + ".jsonl");
        if (!fs::exists(path)) break;
        runs = k;
        std::ifstream in(path);
        std::string line;
        while (std::getline(in, line)) {
            if (trim(line).empty()) continue;
            try {
                out.push_back(record_from_json(json::parse(line), k));
            } catch (const json::exception& e) {
                throw FormatError(path.string() + ": " + e.what());
            }
        }
    }
    if (runs == 0) throw PreconditionError("no run files in " + dir.string());
    return out;
}

json run_eval(const fs::path& ws, const std::string& method, const std::string& caption, const RunConfig& config,
              gateway::Gateway& gateway, const TemplateLibrary& templates) {
    if (method.empty() || method.find('/') != std::string::npos) {
        throw PreconditionError("method name must be a plain directory name");
    }
    const auto items = qa::read_qa_jsonl(ws / "qa.jsonl");
    std::vector<qa::SceneHint> hints;
    if (fs::exists(ws / "scene_hints.json")) hints = qa::read_scene_hints(ws / "scene_hints.json");
    const JudgeContext ctx{gateway, templates, config.model_name, config.temperature, config.max_tokens};
    const int runs = config.judge_runs;

    std::vector<EvalRecord> records(items.size() * static_cast<std::size_t>(runs));
    parallel_for(records.size(), config.fan_out, [&](std::size_t i) {
        const auto& item = items[i / static_cast<std::size_t>(runs)];
        const int run = static_cast<int>(i % static_cast<std::size_t>(runs)) + 1;
        const auto verdict = judge_question(ctx, caption, item, neighbor_hints(item, hints), run);
        records[i] = {item.question_id, run, verdict.choice, verdict.raw_text};
    });

    const auto dir = ws / "eval" / method;
    for (int k = 1; k <= runs; ++k) {
        std::string text;
        for (const auto& r : records) {
            if (r.run == k) text += to_json(r).dump() + "\n";
        }
        write_text(dir / ("run" + std::to_string(k) + ".jsonl"), text);
    }
    const auto report = aggregate_report(items, records, runs, 1, method);
    write_json(dir / "report.json", report);
    write_text(dir / "report.md", render_report_markdown(report));
    return report;
}

}  // namespace glave::eval
