// Copyright (C) 2025 The glave authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "glave/error.hpp"

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace glave {

/// Names of every prompt the pipeline, QA generator and judge use. Each maps
/// to `<name>.txt` in the template directory.
const std::vector<std::string>& template_names();

/// A prompt body with `{placeholder}` slots and optional sections
/// `{{#flag}} ... {{/flag}}` that are dropped when the flag is disabled.
struct PromptTemplate {
    std::string name;
    std::string body;

    /// Placeholders in the body, in first-appearance order.
    std::vector<std::string> placeholders() const;
    std::vector<std::string> sections() const;

    /// Strips disabled sections, then substitutes every placeholder. A
    /// placeholder left without a value is an error.
    std::string render(const std::map<std::string, std::string>& values,
                       const std::set<std::string>& disabled_sections = {}) const;
};

class TemplateLibrary {
public:
    /// Loads every known template from `dir`; a missing file is a ConfigError.
    /// Leading lines starting with `//` are dropped.
    static TemplateLibrary load(const std::filesystem::path& dir);
    /// The directory the build ships with.
    static std::filesystem::path default_dir();

    const PromptTemplate& get(const std::string& name) const;

    /// Throws ConfigError when `name` lacks any of `placeholders`.
    void require(const std::string& name, const std::vector<std::string>& placeholders) const;

private:
    std::map<std::string, PromptTemplate> templates_;
};

}  // namespace glave
