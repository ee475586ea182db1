#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "infdiff/transforms.hpp"
#include "infdiff/verify.hpp"

using namespace infdiff;

namespace {

Tensor<float> smooth_terrain(std::uint64_t seed, std::int64_t size) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> phase(0.0, 6.283185307179586);
    std::uniform_real_distribution<double> freq(0.01, 0.06);
    const double p0 = phase(rng), p1 = phase(rng), f0 = freq(rng), f1 = freq(rng);
    Tensor<float> t(1, size, size);
    for (std::int64_t y = 0; y < size; ++y) {
        for (std::int64_t x = 0; x < size; ++x) {
            t(0, y, x) = static_cast<float>(std::sin(f0 * x + p0) * std::cos(f1 * y + p1) + 0.3 * std::sin(f1 * (x + y) + p0));
        }
    }
    return t;
}

double rmse(const Tensor<float>& a, const Tensor<float>& b) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        const double d = static_cast<double>(a.values()[k]) - static_cast<double>(b.values()[k]);
        s += d * d;
    }
    return std::sqrt(s / static_cast<double>(a.size()));
}

} // namespace

TEST(SignedSqrt, Examples) {
    EXPECT_EQ(signed_sqrt(4.0f), 2.0f);
    EXPECT_EQ(signed_sqrt(-9.0f), -3.0f);
    EXPECT_EQ(signed_sqrt(0.0f), 0.0f);
    EXPECT_EQ(signed_square(-3.0f), -9.0f);
}

TEST(SignedSqrt, OddMonotoneAndInverse) {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<float> d(-11000.0f, 9000.0f);
    double worst = 0.0;
    for (int k = 0; k < 100000; ++k) {
        const float x = d(rng);
        const float y = d(rng);
        EXPECT_EQ(signed_sqrt(-x), -signed_sqrt(x));
        if (x < y) {
            EXPECT_LE(signed_sqrt(x), signed_sqrt(y));
        }
        worst = std::max(worst, std::fabs(static_cast<double>(signed_square(signed_sqrt(x))) - x));
    }
    EXPECT_LE(worst, 1e-3);
}

TEST(SignedSqrt, TensorFormsMatchScalar) {
    Tensor<float> t(1, 1, 3);
    t.values() = {4.0f, -2.25f, 0.0f};
    EXPECT_EQ(signed_sqrt(t).values(), (std::vector<float>{2.0f, -1.5f, 0.0f}));
    EXPECT_EQ(signed_square(signed_sqrt(t)).values(), t.values());
}

TEST(Resampling, DownsampleUpsample) {
    Tensor<float> t(1, 2, 4);
    t.values() = {1, 2, 3, 4, 5, 6, 7, 8};
    const auto d = block_downsample(t, 2);
    EXPECT_EQ(d.values(), (std::vector<float>{3.5f, 5.5f}));
    const auto u = nearest_upsample(d, 2);
    EXPECT_EQ(u.values(), (std::vector<float>{3.5f, 3.5f, 5.5f, 5.5f, 3.5f, 3.5f, 5.5f, 5.5f}));
    EXPECT_THROW(block_downsample(t, 3), ShapeError);
}

TEST(Laplacian, DecodeEncodeIsBitExact) {
    std::mt19937_64 rng(2);
    std::normal_distribution<float> n(0.0f, 1000.0f);
    for (int k = 0; k < 50; ++k) {
        Tensor<float> x(2, 16, 24);
        for (auto& v : x.values()) {
            v = n(rng) * (k % 2 == 0 ? 1.0f : 1e-4f);
        }
        EXPECT_TRUE(bitwise_equal(laplacian_decode(laplacian_encode(x, 8, 2)), x));
    }
}

TEST(Laplacian, ConstantInput) {
    const Tensor<float> x(1, 16, 16, 7.25f);
    const auto p = laplacian_encode(x, 8, 3);
    for (float v : p.low.values()) {
        EXPECT_EQ(v, 7.25f);
    }
    for (double v : p.high.values()) {
        EXPECT_EQ(v, 0.0);
    }
}

TEST(Laplacian, SmoothUpsampledInputRecoversLow) {
    Tensor<float> low(1, 8, 8);
    for (std::int64_t y = 0; y < 8; ++y) {
        for (std::int64_t x = 0; x < 8; ++x) {
            low(0, y, x) = static_cast<float>(0.1 * x + 0.05 * y);
        }
    }
    const auto p = laplacian_encode(nearest_upsample(low, 8), 8, 1);
    EXPECT_LE(max_relative_deviation(p.low, low), 0.1);
    EXPECT_THROW(laplacian_encode(Tensor<float>(1, 12, 16), 8, 1), ShapeError);
}

TEST(Laplacian, StabilizeCleanPairReproducesLow) {
    const auto x = smooth_terrain(3, 64);
    const auto p = laplacian_encode(x, 8, 4);
    const auto s = laplacian_stabilize(p, 8, 4);
    EXPECT_LE(max_relative_deviation(s.low, p.low), 1e-6);
    EXPECT_TRUE(bitwise_equal(s.high, p.high));
}

TEST(Laplacian, StabilizeReducesInjectedNoise) {
    std::mt19937_64 rng(4);
    std::normal_distribution<float> noise(0.0f, 0.01f);
    for (int k = 0; k < 5; ++k) {
        const auto x = smooth_terrain(100 + k, 64);
        auto p = laplacian_encode(x, 8, 4);
        for (auto& v : p.low.values()) {
            v += noise(rng);
        }
        const double before = rmse(laplacian_decode(p), x);
        const double after = rmse(laplacian_decode(laplacian_stabilize(p, 8, 4)), x);
        EXPECT_LT(after, before);
    }
}

TEST(Laplacian, SecondStabilizationChangesLess) {
    std::mt19937_64 rng(5);
    std::normal_distribution<float> noise(0.0f, 0.01f);
    const auto x = smooth_terrain(7, 64);
    auto p = laplacian_encode(x, 8, 4);
    for (auto& v : p.low.values()) {
        v += noise(rng);
    }
    const auto once = laplacian_stabilize(p, 8, 4);
    const auto twice = laplacian_stabilize(once, 8, 4);
    EXPECT_LT(rmse(twice.low, once.low), rmse(once.low, p.low));
}

TEST(Normalize, Examples) {
    const auto a = normalize_heightmap_u8(Tensor<float>(1, 3, 3, 100.0f));
    EXPECT_EQ(a.channels(), 3);
    for (auto v : a.values()) {
        EXPECT_EQ(v, 128);
    }
    Tensor<float> b(1, 1, 3);
    b.values() = {0.0f, 255.0f, 127.0f};
    const auto nb = normalize_heightmap_u8(b);
    EXPECT_EQ(nb(0, 0, 0), 0);
    EXPECT_EQ(nb(1, 0, 1), 255);
    EXPECT_EQ(nb(2, 0, 2), 127);
    Tensor<float> c(1, 1, 3);
    c.values() = {0.0f, 1000.0f, 500.0f};
    const auto nc = normalize_heightmap_u8(c);
    EXPECT_EQ(nc(0, 0, 0), 0);
    EXPECT_EQ(nc(0, 0, 1), 255);
    EXPECT_EQ(nc(0, 0, 2), 128);
}

TEST(Normalize, InvariantUnderConstantShift) {
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<float> d(0.0f, 3000.0f);
    Tensor<float> x(1, 8, 8);
    for (auto& v : x.values()) {
        v = std::round(d(rng));
    }
    Tensor<float> shifted = x;
    for (auto& v : shifted.values()) {
        v += 512.0f;
    }
    EXPECT_EQ(normalize_heightmap_u8(x).values(), normalize_heightmap_u8(shifted).values());
    const auto batch = normalize_heightmap_u8(std::vector<Tensor<float>>{x, shifted});
    EXPECT_EQ(batch.size(), 2u);
}
