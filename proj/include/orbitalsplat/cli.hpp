// Copyright Contributors to the OrbitalSplat Project
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <string>
#include <vector>

namespace orbitalsplat {

/// Process exit codes.
enum ExitCode : int {
    kExitOk = 0,
    kExitFailure = 1,
    kExitUsage = 2,
    kExitTransport = 3,
};

/// Runs the command line `args` (args[0] is the program name) and returns the exit code.
int run_cli(const std::vector<std::string> &args);

} // namespace orbitalsplat
