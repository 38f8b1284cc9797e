// Copyright Contributors to the OrbitalSplat Project
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include "orbitalsplat/guidance_client.hpp"
#include "orbitalsplat/image.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace orbitalsplat {

/// Reported instead of +inf for identical images.
inline constexpr double kPsnrCapDb = 99.0;

/// 10 log10(max^2 / MSE) over RGB (alpha ignored), capped at kPsnrCapDb.
double psnr(const ImageRGBA &a, const ImageRGBA &b, double max_value = 1.0);

/// Mean SSIM over RGB channels and all window positions where the 11x11 Gaussian window
/// (sigma 1.5) fits entirely inside the image. Unit dynamic range.
double ssim(const ImageRGBA &a, const ImageRGBA &b);

struct MetricRow {
    std::string pair_id;
    double psnr_db = 0.0;
    double ssim = 0.0;
    std::optional<double> lpips;
    std::optional<double> clip;
};

struct Aggregate {
    double mean = 0.0;
    double std = 0.0; ///< population standard deviation
    std::size_t count = 0;
};

Aggregate aggregate(const std::vector<double> &values);

struct PairError {
    std::string pair_id;
    std::string message;
};

struct MetricReport {
    std::vector<MetricRow> rows;
    std::vector<PairError> errors;
    Aggregate psnr, ssim;
    std::optional<Aggregate> lpips, clip;
    std::string config_hash;
    std::string timestamp; ///< UTC, ISO 8601

    /// Recomputes the aggregates from rows.
    void finalize();
};

/// Pairs images by file name (PNG files only), composites both over white and computes metrics.
/// LPIPS and CLIP come from `client` when given. Throws EmptyInput when both directories hold no
/// images and InvalidArgument listing the names present on one side only. Failures of single
/// pairs are recorded in `errors` and do not stop the run.
MetricReport evaluate_pairs(const std::filesystem::path &pred_dir, const std::filesystem::path &gt_dir,
                            GuidanceClient *client = nullptr, const std::string &config_hash = "",
                            double psnr_max_value = 1.0);

/// Writes `report.csv` (one row per pair) and `summary.txt` into `out_dir`.
void write_report(const MetricReport &report, const std::filesystem::path &out_dir);

/// Hex SHA-256 of `text`.
std::string sha256_hex(const std::string &text);

} // namespace orbitalsplat
