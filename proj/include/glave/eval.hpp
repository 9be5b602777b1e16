// Copyright (C) 2025 The glave authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "glave/config.hpp"
#include "glave/gateway.hpp"
#include "glave/image.hpp"
#include "glave/pipeline.hpp"
#include "glave/qa.hpp"
#include "glave/templates.hpp"

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace glave::eval {

enum class Choice { A, B, C, D, E };
char letter(Choice c);
Choice choice_from_index(int correct_index);

/// {"answer": "X"} or a bare leading letter A-E. Throws ParseError when no
/// letter can be read or the reply names more than one.
Choice parse_verdict(std::string_view text);

struct JudgeVerdict {
    std::optional<Choice> choice;  // nullopt: judge failure
    std::string raw_text;
};

struct EvalCounts {
    long n_c = 0;  // correct
    long n_w = 0;  // wrong, excluding E
    long n_e = 0;  // "Not mentioned"
    long total() const { return n_c + n_w + n_e; }
    EvalCounts& operator+=(const EvalCounts& o) {
        n_c += o.n_c;
        n_w += o.n_w;
        n_e += o.n_e;
        return *this;
    }
};

struct Metrics {
    double acc = 0.0;
    double hall = 0.0;
    double nm = 0.0;
};

/// Acc = n_c / T, Hall = n_w / (n_c + n_w), N.M. = n_e / T with
/// T = n_c + n_w + n_e. An empty denominator gives 0.
Metrics compute_metrics(const EvalCounts& counts);

double qa_per_video(long questions, long videos);

enum class ConsistencyClass {
    consistent_correct,
    consistent_wrong,
    consistent_not_mentioned,
    inconsistent_due_to_E,
    fully_inconsistent,
};
std::string to_string(ConsistencyClass c);
const std::array<ConsistencyClass, 5>& consistency_classes();

/// nullopt when any of the three runs is a judge failure.
std::optional<ConsistencyClass> classify_consistency(const std::array<std::optional<Choice>, 3>& verdicts,
                                                     Choice gold);

struct JudgeContext {
    gateway::Gateway& gateway;
    const TemplateLibrary& templates;
    std::string model_name;
    double temperature = 0.0;
    int max_tokens = 2048;
};

/// Hints of the scenes adjacent to the item's scene; empty for global items.
std::vector<qa::SceneHint> neighbor_hints(const qa::QuestionOptions& item, std::span<const qa::SceneHint> hints);

/// One judged answer. `run` (1-based) selects an independent model sample.
JudgeVerdict judge_question(const JudgeContext& ctx, const std::string& caption, const qa::QuestionOptions& item,
                            std::span<const qa::SceneHint> neighbors, int run = 1);

struct EvalRecord {
    std::string question_id;
    int run = 1;
    std::optional<Choice> choice;
    std::string raw_text;
};

json to_json(const EvalRecord& r);
EvalRecord record_from_json(const json& j, int run);

/// Per-run and mean-of-runs metrics, pooled-count metrics, consistency
/// histogram (three runs only), per-qtype breakdown and judge-failure rate.
/// Throws ReportError unless every item has exactly one record per run.
json aggregate_report(std::span<const qa::QuestionOptions> items, std::span<const EvalRecord> records, int runs,
                      long videos, const std::string& method = {});

std::string render_report_markdown(const json& report);

/// Horizontal bar chart of per-qtype accuracy.
Raster render_report_plot(const json& report);

/// Judges every item of ws/qa.jsonl `runs` times against `caption` and writes
/// eval/{method}/run{k}.jsonl, report.json and report.md.
json run_eval(const std::filesystem::path& ws, const std::string& method, const std::string& caption,
              const RunConfig& config, gateway::Gateway& gateway, const TemplateLibrary& templates);

/// run{k}.jsonl files of one method directory, k = 1, 2, ...
std::vector<EvalRecord> read_run_records(const std::filesystem::path& method_dir, int& runs);

}  // namespace glave::eval
