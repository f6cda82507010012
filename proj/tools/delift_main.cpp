// SPDX-License-Identifier: Apache-2.0

#include <iostream>
#include <string>
#include <vector>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "delift/cli.hpp"

int main(int argc, char** argv) {
    // stdout carries command output (JSON, CSV); logs go to stderr.
    spdlog::set_default_logger(spdlog::stderr_color_mt("delift"));
    std::vector<std::string> args(argv + 1, argv + argc);
    return delift::cli::dispatch(args, std::cout, std::cerr);
}
