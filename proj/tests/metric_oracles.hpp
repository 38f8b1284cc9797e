// Copyright Contributors to the OrbitalSplat Project
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include "orbitalsplat/image.hpp"

#include <cmath>

namespace orbitalsplat::test {

// Direct 11x11 window, no separability, no shared sums.
inline double brute_force_ssim(const ImageRGBA &a, const ImageRGBA &b) {
    double w[11][11];
    double total = 0.0;
    for (int i = 0; i < 11; ++i) {
        for (int j = 0; j < 11; ++j) {
            w[i][j] = std::exp(-((i - 5) * (i - 5) + (j - 5) * (j - 5)) / (2.0 * 1.5 * 1.5));
            total += w[i][j];
        }
    }
    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    double sum = 0.0;
    long count = 0;
    for (int c = 0; c < 3; ++c) {
        for (int y = 0; y + 11 <= a.height(); ++y) {
            for (int x = 0; x + 11 <= a.width(); ++x) {
                double ma = 0, mb = 0;
                for (int i = 0; i < 11; ++i) {
                    for (int j = 0; j < 11; ++j) {
                        ma += w[i][j] / total * a.at(x + j, y + i, c);
                        mb += w[i][j] / total * b.at(x + j, y + i, c);
                    }
                }
                double va = 0, vb = 0, cov = 0;
                for (int i = 0; i < 11; ++i) {
                    for (int j = 0; j < 11; ++j) {
                        const double da = a.at(x + j, y + i, c) - ma;
                        const double db = b.at(x + j, y + i, c) - mb;
                        va += w[i][j] / total * da * da;
                        vb += w[i][j] / total * db * db;
                        cov += w[i][j] / total * da * db;
                    }
                }
                sum += (2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                ++count;
            }
        }
    }
    return sum / static_cast<double>(count);
}

} // namespace orbitalsplat::test
