// Copyright (C) 2025 The glave authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <json.hpp>

#include <filesystem>
#include <string>

namespace glave {

using json = nlohmann::json;

json read_json(const std::filesystem::path& path);

/// Writes `j` with two-space indentation and a trailing newline, creating
/// parent directories as needed.
void write_json(const std::filesystem::path& path, const json& j);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

/// `{index:06}` + extension, e.g. 000012.png.
std::string numbered(int index, const char* extension);

}  // namespace glave
