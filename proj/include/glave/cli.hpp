// Copyright (C) 2025 The glave authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "glave/config.hpp"
#include "glave/gateway.hpp"

#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace glave::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitStage = 1;
inline constexpr int kExitUsage = 2;

/// Parses one `--kebab-case` flag value into the JSON type of config key `key`.
json flag_value(const std::string& key, const std::string& text);

/// Relative fixture/cache/template paths are taken relative to `base`.
std::filesystem::path resolve(const std::string& path, const std::filesystem::path& base);

/// Gateway for a resolved configuration; live and record talk to the endpoint.
std::unique_ptr<gateway::Gateway> make_gateway(const RunConfig& config, const std::filesystem::path& base);

struct VerifyResult {
    int checked = 0;
    std::vector<std::string> problems;
};

/// Recomputes every fixture's cache key from its stored request.
VerifyResult verify_fixtures(const std::filesystem::path& dir);

/// `glave <subcommand> [options]`; `args` excludes the program name.
/// Diagnostics go to `err`, human-readable results to `out`.
int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace glave::cli
