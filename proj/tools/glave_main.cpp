// Copyright (C) 2025 The glave authors
// SPDX-License-Identifier: Apache-2.0

#include "glave/cli.hpp"

#include <iostream>

int main(int argc, char** argv) {
    return glave::cli::run_command(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
