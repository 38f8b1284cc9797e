// Copyright Contributors to the OrbitalSplat Project
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include "orbitalsplat/dataset.hpp"
#include "orbitalsplat/guidance_client.hpp"
#include "orbitalsplat/imageops.hpp"
#include "orbitalsplat/reconstruct.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

namespace orbitalsplat {

struct CorpusConfig {
    int n_validation = 0;
    int n_chunks = 48;

    void validate() const;
};

struct MeshConfig {
    /// Lattice samples per axis.
    int resolution = 128;
    double iso = 1.0;
    bool texture = true;
    int atlas_size = 1024;
    /// Square render size of each bake view.
    int bake_image_size = 256;
    /// Bake views sit on the 48-view orbits at this radius.
    double bake_radius = 2.0;

    void validate() const;
};

struct EvaluateConfig {
    double psnr_max_value = 1.0;

    void validate() const;
};

struct PipelineConfig {
    std::uint64_t seed = 0;
    /// Worker cap; 0 uses every hardware thread.
    int jobs = 0;
    DatasetOptions render;
    CorpusConfig dataset;
    PreprocessOptions preprocess;
    ReconstructionConfig reconstruct;
    /// Renders of the reference view are written every this many iterations (0: final only).
    int snapshot_every = 500;
    MeshConfig mesh;
    EvaluateConfig evaluate;
    /// An empty base_url means "not configured".
    ServiceEndpoint service;

    /// Validates every section against the module preconditions.
    void validate() const;
    /// `service` when it names a URL, else ORBITALSPLAT_ENDPOINT with the configured timeout and
    /// retries, else nothing.
    std::optional<ServiceEndpoint> endpoint() const;
};

/// Parses YAML. Unknown keys and ill-typed values throw ParseError naming the 1-based line and
/// the dotted key; semantic violations throw InvalidArgument. Missing keys keep their defaults.
PipelineConfig parse_config(const std::string &yaml_text);
PipelineConfig load_config(const std::filesystem::path &path);

/// Every effective value, in a form parse_config reads back to an identical config. The service
/// auth token is the one exception: it is written as null.
std::string dump_config(const PipelineConfig &config);

/// Reference camera at `position` looking at the origin, +Z up (+Y when looking along Z).
CameraPose reference_pose_at(const Vec3 &position);

} // namespace orbitalsplat
