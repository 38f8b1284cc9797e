// Copyright Contributors to the OrbitalSplat Project
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include "orbitalsplat/geometry.hpp"
#include "orbitalsplat/raster.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace orbitalsplat {

enum class Split { Train, Validation, Test };

std::string_view to_string(Split split);
Split split_from_string(std::string_view name);

/// One rendered view: the pose record plus where its image lives (relative to the manifest).
struct ViewRecord {
    std::string image_path;
    OrbitPlane plane = OrbitPlane::XY;
    int index = 0;
    double angle_deg = 0.0;
    CameraPose pose;
    double fov_y_deg = 49.1;
    int width = 0;
    int height = 0;

    CameraIntrinsics intrinsics() const;
};

struct DatasetManifest {
    std::string model_id;
    Split split = Split::Train;
    int chunk_index = 0;
    std::vector<ViewRecord> views;
};

struct DatasetOptions {
    double radius = 2.0;
    /// Rasterization resolution and field of view.
    CameraIntrinsics intrinsics{};
    /// Stored image size; renders are reduced to it with an area filter.
    int output_size = 256;
    RenderSettings settings{};

    void validate() const;
};

/// Parses, normalizes and renders one model's 48 views as `{plane}_{index:02}.png` plus
/// `manifest.json` in `out_dir`.
DatasetManifest render_dataset(const std::filesystem::path &model, const std::filesystem::path &out_dir,
                               const DatasetOptions &opts);

std::string view_file_name(OrbitPlane plane, int index);

/// Deterministic shuffle under `seed`; the first `n_validation` models become validation and
/// the rest train. The test split is supplied externally.
std::map<std::string, Split> assign_splits(const std::vector<std::string> &model_ids, int n_validation,
                                           std::uint64_t seed);

/// Round-robin over train manifests in input order; non-train manifests get chunk 0.
std::vector<DatasetManifest> chunk_manifests(std::vector<DatasetManifest> manifests, int n_chunks);

void write_manifest(const DatasetManifest &manifest, const std::filesystem::path &path);
DatasetManifest read_manifest(const std::filesystem::path &path);

struct CorpusEntry {
    std::string model_id;
    Split split = Split::Train;
    int chunk_index = 0;
    std::string manifest_path;
    std::size_t view_count = 0;
};

/// Writes the corpus index. Fine-tuning hyperparameters are recorded as provenance only.
void write_corpus_index(const std::vector<CorpusEntry> &entries, int n_chunks,
                        const std::filesystem::path &path);

} // namespace orbitalsplat
