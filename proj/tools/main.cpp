// Copyright Contributors to the OrbitalSplat Project
// SPDX-License-Identifier: Apache-2.0
//
#include "orbitalsplat/cli.hpp"

int main(int argc, char **argv) { return orbitalsplat::run_cli(std::vector<std::string>(argv, argv + argc)); }
