#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "infdiff/rng.hpp"

using namespace infdiff;

namespace {

double normal_cdf(double x) {
    return 0.5 * std::erfc(-x / std::sqrt(2.0));
}

} // namespace

TEST(NoiseAt, Pure) {
    const NoiseStream s{Seed{42}, 3};
    const float a = noise_at(s, -17, 12345678901LL, 2);
    const float b = noise_at(s, -17, 12345678901LL, 2);
    EXPECT_EQ(std::memcmp(&a, &b, sizeof(float)), 0);
}

TEST(NoiseAt, SeedAndStreamSensitivity) {
    EXPECT_NE(noise_at(NoiseStream{Seed{1}, 0}, 0, 0, 0), noise_at(NoiseStream{Seed{2}, 0}, 0, 0, 0));
    EXPECT_NE(noise_at(NoiseStream{Seed{1}, 0}, 0, 0, 0), noise_at(NoiseStream{Seed{1}, 1}, 0, 0, 0));
    EXPECT_NE(noise_at(NoiseStream{Seed{1}, 0}, 0, 0, 0), noise_at(NoiseStream{Seed{1}, 0}, 0, 0, 1));
}

TEST(NoiseAt, MomentsOverAMillionCoordinates) {
    const NoiseStream s{Seed{9}, 0};
    double sum = 0.0;
    double sq = 0.0;
    const int n = 1000;
    for (int y = 0; y < n; ++y) {
        for (int x = 0; x < n; ++x) {
            const double v = noise_at(s, x - 500, y - 500, 0);
            sum += v;
            sq += v * v;
        }
    }
    const double count = static_cast<double>(n) * n;
    const double mean = sum / count;
    EXPECT_NEAR(mean, 0.0, 0.01);
    EXPECT_NEAR(sq / count - mean * mean, 1.0, 0.02);
}

TEST(NoiseAt, KolmogorovSmirnovAgainstStandardNormal) {
    const NoiseStream s{Seed{123}, 7};
    std::vector<double> v;
    v.reserve(100000);
    for (int k = 0; k < 100000; ++k) {
        v.push_back(noise_at(s, k, -k / 3, 0));
    }
    std::sort(v.begin(), v.end());
    double d = 0.0;
    const double n = static_cast<double>(v.size());
    for (std::size_t k = 0; k < v.size(); ++k) {
        const double f = normal_cdf(v[k]);
        d = std::max({d, std::fabs(f - static_cast<double>(k) / n), std::fabs(static_cast<double>(k + 1) / n - f)});
    }
    EXPECT_LT(d, 1.628 / std::sqrt(n));
}

TEST(NoiseAt, StreamsAreDecorrelated) {
    const NoiseStream a{Seed{5}, stream_id(0, StreamPurpose::base_noise)};
    const NoiseStream b{Seed{5}, stream_id(0, StreamPurpose::corruption)};
    double sab = 0.0, sa = 0.0, sb = 0.0, saa = 0.0, sbb = 0.0;
    const int n = 100000;
    for (int k = 0; k < n; ++k) {
        const double x = noise_at(a, k % 317, k / 317, 0);
        const double y = noise_at(b, k % 317, k / 317, 0);
        sa += x;
        sb += y;
        sab += x * y;
        saa += x * x;
        sbb += y * y;
    }
    const double cov = sab / n - (sa / n) * (sb / n);
    const double corr = cov / std::sqrt((saa / n - (sa / n) * (sa / n)) * (sbb / n - (sb / n) * (sb / n)));
    EXPECT_NEAR(corr, 0.0, 0.01);
}

TEST(NoiseRegion, MatchesPointwiseAndAgreesOnOverlaps) {
    const NoiseStream s{Seed{77}, 1};
    const Region a(-3, -2, 8, 6);
    const Region b(1, 0, 10, 7);
    const auto ta = noise_region(s, a, 2);
    const auto tb = noise_region(s, b, 2);
    for (int c = 0; c < 2; ++c) {
        for (std::int64_t y = a.y0; y < a.y1(); ++y) {
            for (std::int64_t x = a.x0; x < a.x1(); ++x) {
                EXPECT_EQ(ta(c, y - a.y0, x - a.x0), noise_at(s, x, y, c));
                if (b.contains(x, y)) {
                    EXPECT_EQ(ta(c, y - a.y0, x - a.x0), tb(c, y - b.y0, x - b.x0));
                }
            }
        }
    }
}

TEST(NoiseRegion, SmallExampleAndTranslation) {
    const NoiseStream s{Seed{1}, 0};
    const auto t = noise_region(s, Region(0, 0, 2, 2), 1);
    EXPECT_EQ(t.size(), 4u);
    EXPECT_EQ(t(0, 1, 0), noise_at(s, 0, 1, 0));
    const auto shifted = noise_region(s, Region(5, -9, 2, 2), 1);
    EXPECT_EQ(shifted(0, 0, 1), noise_at(s, 6, -9, 0));
}

TEST(UniformAt, InOpenUnitInterval) {
    const NoiseStream s{Seed{3}, 0};
    for (int k = 0; k < 10000; ++k) {
        const double u = uniform_at(s, k, 0, 0);
        EXPECT_GT(u, 0.0);
        EXPECT_LT(u, 1.0);
    }
}
