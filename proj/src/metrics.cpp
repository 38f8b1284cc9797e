// Copyright Contributors to the OrbitalSplat Project
// SPDX-License-Identifier: Apache-2.0
//
#include "orbitalsplat/metrics.hpp"

#include "orbitalsplat/error.hpp"
#include "orbitalsplat/imageops.hpp"
#include "orbitalsplat/parallel.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <set>

namespace orbitalsplat {

namespace {

void require_same_size(const ImageRGBA &a, const ImageRGBA &b, const char *what) {
    if (!a.same_size(b)) {
        throw InvalidArgument(std::string(what) + ": image sizes differ (" + std::to_string(a.width()) + "x" +
                              std::to_string(a.height()) + " vs " + std::to_string(b.width()) + "x" +
                              std::to_string(b.height()) + ")");
    }
}

constexpr int kWindow = 11;
constexpr double kWindowSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

std::array<double, kWindow> gaussian_window() {
    std::array<double, kWindow> w{};
    double sum = 0.0;
    for (int i = 0; i < kWindow; ++i) {
        const double d = i - kWindow / 2;
        w[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * kWindowSigma * kWindowSigma));
        sum += w[static_cast<std::size_t>(i)];
    }
    for (double &v : w) {
        v /= sum;
    }
    return w;
}

/// Valid-mode separable filtering of a W x H plane, output (W-10) x (H-10).
std::vector<double> filter_valid(const std::vector<double> &plane, int width, int height,
                                 const std::array<double, kWindow> &w) {
    const int ow = width - kWindow + 1;
    const int oh = height - kWindow + 1;
    std::vector<double> rows(static_cast<std::size_t>(ow) * height);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < ow; ++x) {
            double s = 0.0;
            for (int k = 0; k < kWindow; ++k) {
                s += w[static_cast<std::size_t>(k)] * plane[static_cast<std::size_t>(y) * width + x + k];
            }
            rows[static_cast<std::size_t>(y) * ow + x] = s;
        }
    }
    std::vector<double> out(static_cast<std::size_t>(ow) * oh);
    for (int y = 0; y < oh; ++y) {
        for (int x = 0; x < ow; ++x) {
            double s = 0.0;
            for (int k = 0; k < kWindow; ++k) {
                s += w[static_cast<std::size_t>(k)] * rows[static_cast<std::size_t>(y + k) * ow + x];
            }
            out[static_cast<std::size_t>(y) * ow + x] = s;
        }
    }
    return out;
}

std::string utc_timestamp() {
    const std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

} // namespace

double psnr(const ImageRGBA &a, const ImageRGBA &b, double max_value) {
    require_same_size(a, b, "psnr");
    if (!(max_value > 0.0)) {
        throw InvalidArgument("psnr: max_value must be positive");
    }
    if (a.empty()) {
        throw InvalidArgument("psnr: empty images");
    }
    const auto pa = a.data();
    const auto pb = b.data();
    double sum = 0.0;
    for (std::size_t p = 0; p < a.pixel_count(); ++p) {
        for (std::size_t c = 0; c < 3; ++c) {
            const double d = pa[4 * p + c] - pb[4 * p + c];
            sum += d * d;
        }
    }
    const double mse = sum / (3.0 * static_cast<double>(a.pixel_count()));
    if (mse == 0.0) {
        return kPsnrCapDb;
    }
    return std::min(kPsnrCapDb, 10.0 * std::log10(max_value * max_value / mse));
}

double ssim(const ImageRGBA &a, const ImageRGBA &b) {
    require_same_size(a, b, "ssim");
    const int width = a.width();
    const int height = a.height();
    if (std::min(width, height) < kWindow) {
        throw InvalidArgument("ssim: images must be at least 11 pixels in each dimension");
    }
    const auto w = gaussian_window();
    const std::size_t n = a.pixel_count();
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t c = 0; c < 3; ++c) {
        std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
        for (std::size_t p = 0; p < n; ++p) {
            x[p] = a.data()[4 * p + c];
            y[p] = b.data()[4 * p + c];
            xx[p] = x[p] * x[p];
            yy[p] = y[p] * y[p];
            xy[p] = x[p] * y[p];
        }
        const auto mx = filter_valid(x, width, height, w);
        const auto my = filter_valid(y, width, height, w);
        const auto exx = filter_valid(xx, width, height, w);
        const auto eyy = filter_valid(yy, width, height, w);
        const auto exy = filter_valid(xy, width, height, w);
        for (std::size_t i = 0; i < mx.size(); ++i) {
            const double sx = exx[i] - mx[i] * mx[i];
            const double sy = eyy[i] - my[i] * my[i];
            const double sxy = exy[i] - mx[i] * my[i];
            total += (2.0 * mx[i] * my[i] + kC1) * (2.0 * sxy + kC2) /
                     ((mx[i] * mx[i] + my[i] * my[i] + kC1) * (sx + sy + kC2));
        }
        count += mx.size();
    }
    return total / static_cast<double>(count);
}

Aggregate aggregate(const std::vector<double> &values) {
    Aggregate g;
    g.count = values.size();
    if (values.empty()) {
        return g;
    }
    double sum = 0.0;
    for (double v : values) {
        sum += v;
    }
    g.mean = sum / static_cast<double>(values.size());
    double var = 0.0;
    for (double v : values) {
        var += (v - g.mean) * (v - g.mean);
    }
    g.std = std::sqrt(var / static_cast<double>(values.size()));
    return g;
}

void MetricReport::finalize() {
    std::vector<double> p, s, l, c;
    for (const MetricRow &r : rows) {
        p.push_back(r.psnr_db);
        s.push_back(r.ssim);
        if (r.lpips) {
            l.push_back(*r.lpips);
        }
        if (r.clip) {
            c.push_back(*r.clip);
        }
    }
    psnr = aggregate(p);
    ssim = aggregate(s);
    lpips = l.empty() ? std::nullopt : std::optional(aggregate(l));
    clip = c.empty() ? std::nullopt : std::optional(aggregate(c));
}

MetricReport evaluate_pairs(const std::filesystem::path &pred_dir, const std::filesystem::path &gt_dir,
                            GuidanceClient *client, const std::string &config_hash,
                            double psnr_max_value) {
    namespace fs = std::filesystem;
    auto list = [](const fs::path &dir) {
        std::set<std::string> names;
        if (!fs::is_directory(dir)) {
            throw IoError("evaluate: not a directory: " + dir.string());
        }
        for (const auto &entry : fs::directory_iterator(dir)) {
            if (entry.is_regular_file() && entry.path().extension() == ".png") {
                names.insert(entry.path().filename().string());
            }
        }
        return names;
    };
    const auto pred = list(pred_dir);
    const auto gt = list(gt_dir);
    if (pred.empty() && gt.empty()) {
        throw EmptyInput("evaluate: no PNG images in " + pred_dir.string() + " or " + gt_dir.string());
    }
    std::vector<std::string> only_pred, only_gt;
    std::set_difference(pred.begin(), pred.end(), gt.begin(), gt.end(), std::back_inserter(only_pred));
    std::set_difference(gt.begin(), gt.end(), pred.begin(), pred.end(), std::back_inserter(only_gt));
    if (!only_pred.empty() || !only_gt.empty()) {
        std::string msg = "evaluate: unmatched file names;";
        for (const auto &n : only_pred) {
            msg += " prediction-only " + n;
        }
        for (const auto &n : only_gt) {
            msg += " ground-truth-only " + n;
        }
        throw InvalidArgument(msg);
    }

    const std::vector<std::string> names(pred.begin(), pred.end());
    std::vector<std::optional<MetricRow>> rows(names.size());
    std::vector<std::string> errors(names.size());
    parallel_for(names.size(), [&](std::size_t i) {
        try {
            const Vec3 white = Vec3::Ones();
            const ImageRGBA a = composite_over(read_png(pred_dir / names[i]), white);
            const ImageRGBA b = composite_over(read_png(gt_dir / names[i]), white);
            MetricRow row;
            row.pair_id = names[i];
            row.psnr_db = psnr(a, b, psnr_max_value);
            row.ssim = ssim(a, b);
            if (client) {
                const RemoteMetrics m = client->metrics(a, b);
                row.lpips = m.lpips;
                row.clip = m.clip_similarity;
            }
            rows[i] = row;
        } catch (const std::exception &e) {
            errors[i] = e.what();
        }
    });

    MetricReport report;
    for (std::size_t i = 0; i < names.size(); ++i) {
        if (rows[i]) {
            report.rows.push_back(*rows[i]);
        } else {
            report.errors.push_back({names[i], errors[i]});
        }
    }
    report.config_hash = config_hash;
    report.timestamp = utc_timestamp();
    report.finalize();
    return report;
}

void write_report(const MetricReport &report, const std::filesystem::path &out_dir) {
    std::filesystem::create_directories(out_dir);
    const bool remote = report.lpips.has_value() || report.clip.has_value();
    {
        std::ofstream f(out_dir / "report.csv");
        if (!f) {
            throw IoError("cannot write " + (out_dir / "report.csv").string());
        }
        f << "pair_id,psnr_db,ssim" << (remote ? ",lpips,clip_similarity" : "") << '\n';
        char buf[128];
        for (const MetricRow &r : report.rows) {
            std::snprintf(buf, sizeof(buf), "%.17g,%.17g", r.psnr_db, r.ssim);
            f << r.pair_id << ',' << buf;
            if (remote) {
                std::snprintf(buf, sizeof(buf), ",%.17g,%.17g", r.lpips.value_or(NAN), r.clip.value_or(NAN));
                f << buf;
            }
            f << '\n';
        }
    }
    std::ofstream f(out_dir / "summary.txt");
    if (!f) {
        throw IoError("cannot write " + (out_dir / "summary.txt").string());
    }
    auto line = [&](const char *name, const Aggregate &g) {
        char buf[160];
        std::snprintf(buf, sizeof(buf), "%-16s mean %.6f  std %.6f  n %zu\n", name, g.mean, g.std, g.count);
        f << buf;
    };
    f << "pairs            " << report.rows.size() << '\n';
    f << "errors           " << report.errors.size() << '\n';
    line("psnr_db", report.psnr);
    line("ssim", report.ssim);
    if (report.lpips) {
        line("lpips", *report.lpips);
    }
    if (report.clip) {
        line("clip_similarity", *report.clip);
    }
    f << "config_sha256    " << (report.config_hash.empty() ? "-" : report.config_hash) << '\n';
    f << "timestamp        " << report.timestamp << '\n';
    for (const PairError &e : report.errors) {
        f << "error " << e.pair_id << ": " << e.message << '\n';
    }
}

std::string sha256_hex(const std::string &text) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(text.data(), text.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw Error("sha256 failed");
    }
    std::string out;
    char buf[3];
    for (unsigned int i = 0; i < len; ++i) {
        std::snprintf(buf, sizeof(buf), "%02x", digest[i]);
        out += buf;
    }
    return out;
}

} // namespace orbitalsplat
