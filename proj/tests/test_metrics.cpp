// Copyright Contributors to the OrbitalSplat Project
// SPDX-License-Identifier: Apache-2.0
//
#include "orbitalsplat/error.hpp"
#include "orbitalsplat/image.hpp"
#include "orbitalsplat/metrics.hpp"

#include "metric_oracles.hpp"
#include "mock_service.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

using namespace orbitalsplat;

namespace {

ImageRGBA noise(int w, int h, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    ImageRGBA img(w, h);
    for (std::size_t i = 0; i < img.data().size(); ++i) {
        img.data()[i] = i % 4 == 3 ? 1.0 : u(rng);
    }
    return img;
}

ImageRGBA shifted(const ImageRGBA &a, double delta) {
    ImageRGBA b = a;
    for (std::size_t i = 0; i < b.data().size(); ++i) {
        if (i % 4 != 3) {
            b.data()[i] += delta;
        }
    }
    return b;
}

std::filesystem::path fresh_dir(const std::string &name) {
    const auto dir = std::filesystem::temp_directory_path() / ("orbitalsplat_metrics_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

std::vector<std::string> lines_of(const std::filesystem::path &p) {
    std::ifstream f(p);
    std::vector<std::string> out;
    for (std::string line; std::getline(f, line);) {
        out.push_back(line);
    }
    return out;
}

} // namespace

TEST(Psnr, Examples) {
    const ImageRGBA a = noise(32, 32, 1, 0.0, 0.5);
    EXPECT_EQ(psnr(a, a), kPsnrCapDb);
    EXPECT_NEAR(psnr(a, shifted(a, 0.1)), 20.0, 1e-9);
    EXPECT_NEAR(psnr(a, shifted(a, 0.5)), 10.0 * std::log10(4.0), 1e-3);
    EXPECT_NEAR(psnr(a, shifted(a, 0.5)), 6.0206, 1e-3);
    // max_value rescales the numerator.
    EXPECT_NEAR(psnr(a, shifted(a, 0.1), 2.0), 20.0 + 20.0 * std::log10(2.0), 1e-9);
}

TEST(Psnr, IgnoresAlpha) {
    const ImageRGBA a = noise(16, 16, 2);
    ImageRGBA b = a;
    b.at(3, 3, 3) = 0.0;
    EXPECT_EQ(psnr(a, b), kPsnrCapDb);
}

TEST(Psnr, SymmetricAndMonotone) {
    const ImageRGBA a = noise(24, 24, 3, 0.0, 0.5);
    const ImageRGBA b = noise(24, 24, 4, 0.0, 0.5);
    EXPECT_EQ(psnr(a, b), psnr(b, a));
    EXPECT_GT(psnr(a, b), 0.0);
    double prev = std::numeric_limits<double>::infinity();
    for (double e : {0.05, 0.1, 0.2, 0.4}) {
        const double p = psnr(a, shifted(a, e));
        EXPECT_LT(p, prev);
        prev = p;
    }
}

TEST(Psnr, Errors) {
    EXPECT_THROW(psnr(ImageRGBA(4, 4), ImageRGBA(4, 5)), InvalidArgument);
    EXPECT_THROW(psnr(ImageRGBA(4, 4), ImageRGBA(4, 4), 0.0), InvalidArgument);
}

TEST(Ssim, IdentityIsOne) {
    const ImageRGBA a = noise(40, 30, 5);
    EXPECT_NEAR(ssim(a, a), 1.0, 1e-9);
}

TEST(Ssim, ConstantImages) {
    const ImageRGBA a(32, 32, {0.5, 0.5, 0.5, 1.0});
    const ImageRGBA b(32, 32, {0.6, 0.6, 0.6, 1.0});
    const double c1 = 1e-4;
    EXPECT_NEAR(ssim(a, b), (2 * 0.5 * 0.6 + c1) / (0.25 + 0.36 + c1), 1e-12);
    EXPECT_NEAR(ssim(a, b), 0.98365, 1e-4);
}

TEST(Ssim, MatchesBruteForceOracle) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const ImageRGBA a = noise(64, 64, 100 + seed);
        const ImageRGBA b = noise(64, 64, 200 + seed);
        EXPECT_NEAR(ssim(a, b), test::brute_force_ssim(a, b), 1e-6) << "seed " << seed;
    }
    // Correlated pair, where the structure term matters.
    const ImageRGBA a = noise(48, 37, 7);
    ImageRGBA b = a;
    for (std::size_t i = 0; i < b.data().size(); i += 7) {
        b.data()[i] = 0.5 * b.data()[i];
    }
    EXPECT_NEAR(ssim(a, b), test::brute_force_ssim(a, b), 1e-6);
}

TEST(Ssim, SymmetricAndInRange) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const ImageRGBA a = noise(20, 20, seed);
        const ImageRGBA b = noise(20, 20, seed + 50);
        EXPECT_EQ(ssim(a, b), ssim(b, a));
        EXPECT_GE(ssim(a, b), -1.0);
        EXPECT_LE(ssim(a, b), 1.0);
    }
}

TEST(Ssim, Errors) {
    EXPECT_THROW(ssim(ImageRGBA(20, 20), ImageRGBA(20, 21)), InvalidArgument);
    EXPECT_THROW(ssim(ImageRGBA(10, 40), ImageRGBA(10, 40)), InvalidArgument);
    EXPECT_NO_THROW(ssim(ImageRGBA(11, 11), ImageRGBA(11, 11)));
}

TEST(Aggregate, PopulationStatistics) {
    const Aggregate a = aggregate({1.0, 2.0, 3.0, 4.0});
    EXPECT_DOUBLE_EQ(a.mean, 2.5);
    EXPECT_NEAR(a.std, std::sqrt(1.25), 1e-15);
    EXPECT_EQ(a.count, 4u);
    const Aggregate empty = aggregate({});
    EXPECT_EQ(empty.count, 0u);
}

TEST(Sha256, KnownDigest) {
    EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(EvaluatePairs, ThirtyPairs) {
    const auto pred = fresh_dir("pred30"), gt = fresh_dir("gt30"), out = fresh_dir("out30");
    for (int i = 0; i < 30; ++i) {
        const std::string name = "img_" + std::to_string(i) + ".png";
        write_png(noise(24, 24, static_cast<std::uint64_t>(i)), gt / name);
        write_png(noise(24, 24, static_cast<std::uint64_t>(i + 1000)), pred / name);
    }
    std::ofstream(gt / "notes.txt") << "ignored";
    MetricReport r = evaluate_pairs(pred, gt, nullptr, "hash123");
    ASSERT_EQ(r.rows.size(), 30u);
    EXPECT_TRUE(r.errors.empty());
    EXPECT_FALSE(r.lpips.has_value());
    EXPECT_EQ(r.psnr.count, 30u);
    EXPECT_EQ(r.config_hash, "hash123");
    EXPECT_FALSE(r.timestamp.empty());

    // Aggregates are recomputable from rows.
    std::vector<double> p, s;
    for (const MetricRow &row : r.rows) {
        p.push_back(row.psnr_db);
        s.push_back(row.ssim);
        EXPECT_FALSE(row.lpips.has_value());
    }
    EXPECT_NEAR(aggregate(p).mean, r.psnr.mean, 1e-9);
    EXPECT_NEAR(aggregate(p).std, r.psnr.std, 1e-9);
    EXPECT_NEAR(aggregate(s).mean, r.ssim.mean, 1e-9);

    write_report(r, out);
    const auto csv = lines_of(out / "report.csv");
    ASSERT_EQ(csv.size(), 31u);
    EXPECT_EQ(csv[0], "pair_id,psnr_db,ssim");
    EXPECT_TRUE(std::filesystem::exists(out / "summary.txt"));
    const auto summary = lines_of(out / "summary.txt");
    std::string joined;
    for (const auto &l : summary) {
        joined += l + "\n";
    }
    EXPECT_NE(joined.find("hash123"), std::string::npos);
    for (const auto &d : {pred, gt, out}) {
        std::filesystem::remove_all(d);
    }
}

TEST(EvaluatePairs, CompositesOverWhite) {
    const auto pred = fresh_dir("pred_white"), gt = fresh_dir("gt_white");
    write_png(ImageRGBA(16, 16, {1.0, 1.0, 1.0, 1.0}), gt / "a.png");
    write_png(ImageRGBA(16, 16, {0.0, 0.0, 0.0, 0.0}), pred / "a.png");
    const MetricReport r = evaluate_pairs(pred, gt);
    ASSERT_EQ(r.rows.size(), 1u);
    EXPECT_EQ(r.rows[0].psnr_db, kPsnrCapDb);
    std::filesystem::remove_all(pred);
    std::filesystem::remove_all(gt);
}

TEST(EvaluatePairs, EmptyAndUnmatched) {
    const auto pred = fresh_dir("pred_empty"), gt = fresh_dir("gt_empty");
    EXPECT_THROW(evaluate_pairs(pred, gt), EmptyInput);
    write_png(noise(16, 16, 1), pred / "only_pred.png");
    write_png(noise(16, 16, 2), gt / "only_gt.png");
    try {
        evaluate_pairs(pred, gt);
        FAIL() << "expected InvalidArgument";
    } catch (const InvalidArgument &e) {
        EXPECT_NE(std::string(e.what()).find("only_pred.png"), std::string::npos);
        EXPECT_NE(std::string(e.what()).find("only_gt.png"), std::string::npos);
    }
    std::filesystem::remove_all(pred);
    std::filesystem::remove_all(gt);
}

TEST(EvaluatePairs, UnreadableImageIsRecorded) {
    const auto pred = fresh_dir("pred5"), gt = fresh_dir("gt5");
    for (int i = 0; i < 5; ++i) {
        const std::string name = "v" + std::to_string(i) + ".png";
        write_png(noise(16, 16, static_cast<std::uint64_t>(i)), gt / name);
        if (i == 3) {
            std::ofstream(pred / name) << "this is not a png";
        } else {
            write_png(noise(16, 16, static_cast<std::uint64_t>(i + 7)), pred / name);
        }
    }
    const MetricReport r = evaluate_pairs(pred, gt);
    EXPECT_EQ(r.rows.size(), 4u);
    ASSERT_EQ(r.errors.size(), 1u);
    EXPECT_NE(r.errors[0].pair_id.find("v3"), std::string::npos);
    EXPECT_EQ(r.psnr.count, 4u);
    std::filesystem::remove_all(pred);
    std::filesystem::remove_all(gt);
}

TEST(EvaluatePairs, RemoteMetricsIffClientGiven) {
    const auto pred = fresh_dir("pred_remote"), gt = fresh_dir("gt_remote"), out = fresh_dir("out_remote");
    for (int i = 0; i < 3; ++i) {
        const std::string name = "p" + std::to_string(i) + ".png";
        write_png(noise(16, 16, static_cast<std::uint64_t>(i)), gt / name);
        write_png(i == 0 ? noise(16, 16, 0) : noise(16, 16, static_cast<std::uint64_t>(i + 9)), pred / name);
    }
    auto mock = std::make_shared<orbitalsplat::testing::MockGuidanceService>();
    ServiceEndpoint ep;
    ep.base_url = "http://mock";
    GuidanceClient client(ep, mock, [](double) {}, 1);
    const MetricReport r = evaluate_pairs(pred, gt, &client);
    ASSERT_EQ(r.rows.size(), 3u);
    ASSERT_TRUE(r.lpips.has_value());
    ASSERT_TRUE(r.clip.has_value());
    EXPECT_EQ(r.lpips->count, 3u);
    for (const MetricRow &row : r.rows) {
        ASSERT_TRUE(row.lpips.has_value());
        ASSERT_TRUE(row.clip.has_value());
        if (row.pair_id.find("p0") != std::string::npos) {
            EXPECT_NEAR(*row.lpips, 0.0, 1e-6);
            EXPECT_NEAR(*row.clip, 1.0, 1e-6);
        } else {
            EXPECT_GT(*row.lpips, 0.0);
        }
    }
    write_report(r, out);
    EXPECT_EQ(lines_of(out / "report.csv").at(0), "pair_id,psnr_db,ssim,lpips,clip_similarity");
    for (const auto &d : {pred, gt, out}) {
        std::filesystem::remove_all(d);
    }
}
