// Copyright (C) 2025 The glave authors
// SPDX-License-Identifier: Apache-2.0

#include "glave/templates.hpp"

#include "glave/jsonio.hpp"

#include <algorithm>
#include <regex>

#ifndef GLAVE_TEMPLATES_DIR
#define GLAVE_TEMPLATES_DIR "templates"
#endif

namespace glave {

const std::vector<std::string>& template_names() {
    static const std::vector<std::string> names{
        "overview",   "diff",     "detail",    "merge",      "scene_split", "scene_caption_first",
        "scene_caption_rest", "qa_scene", "qa_global", "qa_refine", "qa_options", "scene_hints",
        "judge",      "video_filter"};
    return names;
}

namespace {

const std::regex& placeholder_re() {
    static const std::regex re(R"(\{([a-z_]+)\})");
    return re;
}

const std::regex& section_open_re() {
    static const std::regex re(R"(\{\{#([a-z_]+)\}\})");
    return re;
}

}  // namespace

std::vector<std::string> PromptTemplate::placeholders() const {
    std::vector<std::string> out;
    // Section markers are not placeholders.
    const std::string stripped = std::regex_replace(body, std::regex(R"(\{\{[#/][a-z_]+\}\})"), "");
    for (auto it = std::sregex_iterator(stripped.begin(), stripped.end(), placeholder_re());
         it != std::sregex_iterator(); ++it) {
        const auto name = (*it)[1].str();
        if (std::find(out.begin(), out.end(), name) == out.end()) out.push_back(name);
    }
    return out;
}

std::vector<std::string> PromptTemplate::sections() const {
    std::vector<std::string> out;
    for (auto it = std::sregex_iterator(body.begin(), body.end(), section_open_re());
         it != std::sregex_iterator(); ++it) {
        const auto name = (*it)[1].str();
        if (std::find(out.begin(), out.end(), name) == out.end()) out.push_back(name);
    }
    return out;
}

std::string PromptTemplate::render(const std::map<std::string, std::string>& values,
                                   const std::set<std::string>& disabled_sections) const {
    std::string text = body;
    for (const auto& section : sections()) {
        const std::string open = "{{#" + section + "}}";
        const std::string close = "{{/" + section + "}}";
        const bool keep = !disabled_sections.contains(section);
        for (std::size_t pos = text.find(open); pos != std::string::npos; pos = text.find(open, pos)) {
            const auto end = text.find(close, pos);
            if (end == std::string::npos) {
                throw ConfigError("template '" + name + "': unterminated section '" + section + "'");
            }
            if (keep) {
                text.erase(end, close.size());
                text.erase(pos, open.size());
            } else {
                text.erase(pos, end + close.size() - pos);
            }
        }
    }

    std::string out;
    std::size_t last = 0;
    for (auto it = std::sregex_iterator(text.begin(), text.end(), placeholder_re());
         it != std::sregex_iterator(); ++it) {
        const auto& m = *it;
        const auto key = m[1].str();
        const auto v = values.find(key);
        if (v == values.end()) throw ConfigError("template '" + name + "': no value for {" + key + "}");
        out.append(text, last, static_cast<std::size_t>(m.position(0)) - last);
        out += v->second;
        last = static_cast<std::size_t>(m.position(0) + m.length(0));
    }
    out.append(text, last, std::string::npos);
    return out;
}

namespace {

// Leading `//` lines (license header) are not part of the prompt.
std::string strip_header(std::string text) {
    std::size_t pos = 0;
    while (text.compare(pos, 2, "//") == 0) {
        const auto nl = text.find('\n', pos);
        pos = nl == std::string::npos ? text.size() : nl + 1;
    }
    return text.substr(pos);
}

}  // namespace

TemplateLibrary TemplateLibrary::load(const std::filesystem::path& dir) {
    TemplateLibrary lib;
    for (const auto& name : template_names()) {
        const auto path = dir / (name + ".txt");
        if (!std::filesystem::exists(path)) {
            throw ConfigError("prompt template missing: " + path.string());
        }
        lib.templates_[name] = PromptTemplate{name, strip_header(read_text(path))};
    }
    return lib;
}

std::filesystem::path TemplateLibrary::default_dir() {
    return GLAVE_TEMPLATES_DIR;
}

const PromptTemplate& TemplateLibrary::get(const std::string& name) const {
    const auto it = templates_.find(name);
    if (it == templates_.end()) throw ConfigError("unknown prompt template '" + name + "'");
    return it->second;
}

void TemplateLibrary::require(const std::string& name, const std::vector<std::string>& placeholders) const {
    const auto present = get(name).placeholders();
    for (const auto& p : placeholders) {
        if (std::find(present.begin(), present.end(), p) == present.end()) {
            throw ConfigError("template '" + name + "' lacks placeholder {" + p + "}");
        }
    }
}

}  // namespace glave
