// Copyright Contributors to the OrbitalSplat Project
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <cstddef>
#include <functional>

namespace orbitalsplat {

/// Caps the worker count used by every parallel loop in the library. 0 restores the default.
void set_max_jobs(int jobs);
int max_jobs();

/// Runs fn(i) for i in [0, n). Work items must be independent; results must not depend on
/// which worker ran an item.
void parallel_for(std::size_t n, const std::function<void(std::size_t)> &fn);

} // namespace orbitalsplat
