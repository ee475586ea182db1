#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "infdiff/denoiser.hpp"
#include "infdiff/rng.hpp"

using namespace infdiff;

namespace {

Tensor<double> ramp(int channels, std::int64_t h, std::int64_t w) {
    Tensor<double> t(channels, h, w);
    for (int c = 0; c < channels; ++c) {
        for (std::int64_t y = 0; y < h; ++y) {
            for (std::int64_t x = 0; x < w; ++x) {
                t(c, y, x) = 0.25 * static_cast<double>(x) - 0.5 * static_cast<double>(y) + c + std::sin(static_cast<double>(x * y));
            }
        }
    }
    return t;
}

/// Direct 2D box average with clamped indices, as an independent reference for the separable blur.
double blur_at(const Tensor<double>& x, int c, std::int64_t y, std::int64_t px, int radius) {
    double sum = 0.0;
    for (int dy = -radius; dy <= radius; ++dy) {
        for (int dx = -radius; dx <= radius; ++dx) {
            const auto yy = std::clamp<std::int64_t>(y + dy, 0, x.height() - 1);
            const auto xx = std::clamp<std::int64_t>(px + dx, 0, x.width() - 1);
            sum += x(c, yy, xx);
        }
    }
    return sum / ((2.0 * radius + 1) * (2.0 * radius + 1));
}

} // namespace

TEST(BoxBlur, MatchesDirectTwoDimensionalAverage) {
    const auto x = ramp(2, 7, 9);
    const auto b = box_blur(x, 2);
    for (int c = 0; c < 2; ++c) {
        for (std::int64_t y = 0; y < 7; ++y) {
            for (std::int64_t px = 0; px < 9; ++px) {
                EXPECT_NEAR(b(c, y, px), blur_at(x, c, y, px, 2), 1e-12);
            }
        }
    }
}

TEST(BoxBlur, ConstantStaysExactlyConstant) {
    const Tensor<float> x(1, 5, 6, 3.7f);
    const auto b = box_blur(x, 1);
    for (float v : b.values()) {
        EXPECT_EQ(v, 3.7f);
    }
}

TEST(Denoiser, IdentityReturnsInput) {
    DenoiserSpec spec;
    spec.channels = 2;
    const auto x = ramp(2, 4, 4);
    EXPECT_EQ(apply(spec, x, 1).values(), x.values());
}

TEST(Denoiser, ShrinkSmoothFormula) {
    DenoiserSpec spec;
    spec.kind = DenoiserKind::shrink_smooth;
    spec.lambda = {0.3, 0.8};
    spec.radius = 1;
    const auto x = ramp(1, 6, 6);
    for (int t : {1, 2}) {
        const double l = t == 1 ? 0.3 : 0.8;
        const auto out = apply(spec, x, t);
        for (std::int64_t y = 0; y < 6; ++y) {
            for (std::int64_t px = 0; px < 6; ++px) {
                EXPECT_NEAR(out(0, y, px), (1.0 - l) * x(0, y, px) + l * blur_at(x, 0, y, px, 1), 1e-12);
            }
        }
    }
    EXPECT_THROW(apply(spec, x, 3), std::out_of_range);
}

TEST(Denoiser, ShrinkSmoothLambdaZeroIsIdentity) {
    DenoiserSpec spec;
    spec.kind = DenoiserKind::shrink_smooth;
    spec.lambda = {0.0};
    const auto x = ramp(1, 5, 5);
    EXPECT_EQ(apply(spec, x, 1).values(), x.values());
}

TEST(Denoiser, CondAffineBlendsTowardConditioning) {
    DenoiserSpec spec;
    spec.kind = DenoiserKind::cond_affine;
    spec.lambda = {0.0};
    spec.blend = 0.25;
    const auto x = ramp(1, 3, 3);
    Conditioning<double> y;
    y.spatial = Tensor<double>(1, 3, 3, 10.0);
    y.mask = Tensor<double>(1, 3, 3, 1.0);
    y.mask(0, 1, 1) = 0.0;
    const auto out = apply(spec, x, y, 1);
    EXPECT_NEAR(out(0, 0, 0), 0.75 * x(0, 0, 0) + 2.5, 1e-12);
    EXPECT_EQ(out(0, 1, 1), x(0, 1, 1));
}

TEST(Denoiser, CondAffineWithoutConditioningIsShrinkSmooth) {
    DenoiserSpec a;
    a.kind = DenoiserKind::cond_affine;
    a.lambda = {0.4};
    DenoiserSpec b = a;
    b.kind = DenoiserKind::shrink_smooth;
    const auto x = ramp(1, 5, 5);
    EXPECT_EQ(apply(a, x, 1).values(), apply(b, x, 1).values());
}

TEST(Denoiser, CondAffineRejectsMismatchedConditioning) {
    DenoiserSpec spec;
    spec.kind = DenoiserKind::cond_affine;
    Conditioning<double> y;
    y.spatial = Tensor<double>(1, 2, 2);
    EXPECT_THROW(apply(spec, ramp(1, 3, 3), y, 1), DenoiserError);
}

TEST(Denoiser, MultistepEqualsRepeatedInnerApplication) {
    auto inner = std::make_shared<DenoiserSpec>();
    inner->kind = DenoiserKind::shrink_smooth;
    inner->radius = 1;
    DenoiserSpec spec;
    spec.kind = DenoiserKind::multistep;
    spec.inner_steps = 3;
    spec.lambda_start = 0.8;
    spec.lambda_end = 0.2;
    spec.inner = inner;
    const auto x = ramp(1, 6, 6);
    Tensor<double> expected = x;
    for (double l : {0.8, 0.4, 0.2}) {
        DenoiserSpec step = *inner;
        step.lambda = {l};
        expected = apply(step, expected, 1);
    }
    const auto out = apply(spec, x, 1);
    for (std::size_t k = 0; k < out.size(); ++k) {
        EXPECT_NEAR(out.values()[k], expected.values()[k], 1e-12);
    }
    EXPECT_DOUBLE_EQ(spec.inner_lambda(1), 0.4);
}

TEST(Denoiser, IsPure) {
    DenoiserSpec spec;
    spec.kind = DenoiserKind::shrink_smooth;
    const auto x = ramp(1, 8, 8);
    EXPECT_EQ(apply(spec, x, 1).values(), apply(spec, x, 1).values());
}

TEST(Denoiser, ValidationAndChannelChecks) {
    DenoiserSpec spec;
    spec.radius = -1;
    EXPECT_THROW(spec.validate(), std::invalid_argument);
    spec.radius = 1;
    spec.kind = DenoiserKind::multistep;
    spec.inner_steps = 0;
    EXPECT_THROW(spec.validate(), std::invalid_argument);
    spec.inner_steps = 2;
    auto nested = std::make_shared<DenoiserSpec>();
    nested->kind = DenoiserKind::multistep;
    spec.inner = nested;
    EXPECT_THROW(spec.validate(), std::invalid_argument);
    DenoiserSpec two;
    two.channels = 2;
    EXPECT_THROW(apply(two, ramp(1, 2, 2), 1), DenoiserError);
    EXPECT_THROW(denoiser_kind_from_string("unet"), std::invalid_argument);
    EXPECT_EQ(denoiser_kind_from_string(to_string(DenoiserKind::cond_affine)), DenoiserKind::cond_affine);
}

TEST(Conditioning, NearestCropOfParent) {
    Tensor<double> parent(1, 4, 4);
    for (std::int64_t y = 0; y < 4; ++y) {
        for (std::int64_t x = 0; x < 4; ++x) {
            parent(0, y, x) = static_cast<double>(10 * y + x);
        }
    }
    const ParentView<double> view{parent, Region(-2, -2, 4, 4), 4, std::nullopt};
    const auto c = conditioning_for_window(view, WindowLayout(8, 4), WindowIndex{-1, 0}, {}, NoiseStream{Seed{1}, 0});
    ASSERT_EQ(c.spatial.height(), 8);
    // Window {-1, 0} covers x in [-4, 4), y in [0, 8): parent x -1..0, y 0..1.
    EXPECT_EQ(c.spatial(0, 0, 0), 10.0 * 2 + 1);
    EXPECT_EQ(c.spatial(0, 7, 7), 10.0 * 3 + 2);
    EXPECT_EQ(c.mask(0, 3, 3), 1.0);
}

TEST(Conditioning, MissingParentDataIsAnError) {
    Tensor<double> parent(1, 2, 2);
    const ParentView<double> view{parent, Region(0, 0, 2, 2), 4, std::nullopt};
    EXPECT_THROW(conditioning_for_window(view, WindowLayout(8, 4), WindowIndex{1, 0}, {}, NoiseStream{Seed{1}, 0}), ConditioningError);
}

TEST(Conditioning, UnavailableEntriesAreNoiseFilledDeterministically) {
    Tensor<double> parent(2, 2, 2);
    parent(1, 0, 0) = 1.0;
    parent(0, 0, 1) = std::numeric_limits<double>::quiet_NaN();
    const ParentView<double> view{parent, Region(0, 0, 2, 2), 2, 1};
    const NoiseStream fill{Seed{5}, 9};
    const auto a = conditioning_for_window(view, WindowLayout(4, 4), WindowIndex{0, 0}, {0.5}, fill);
    const auto b = conditioning_for_window(view, WindowLayout(4, 4), WindowIndex{0, 0}, {0.5}, fill);
    EXPECT_EQ(a.spatial.channels(), 1);
    EXPECT_EQ(a.mask(0, 0, 0), 1.0);
    EXPECT_EQ(a.mask(0, 0, 2), 0.0);
    EXPECT_EQ(a.climate(0, 0, 0), 0.5);
    EXPECT_EQ(a.climate(0, 0, 2), static_cast<double>(noise_at(fill, 2, 0, 1)));
    EXPECT_EQ(a.spatial(0, 0, 2), static_cast<double>(noise_at(fill, 2, 0, 0)));
    EXPECT_TRUE(std::isfinite(a.spatial(0, 1, 3)));
    EXPECT_EQ(a.spatial.values(), b.spatial.values());
    EXPECT_EQ(a.climate.values(), b.climate.values());
}

TEST(Conditioning, ScalarOnly) {
    const auto c = scalar_conditioning<float>(WindowLayout(4, 2), {1.5, -2.0});
    EXPECT_EQ(c.climate.channels(), 2);
    EXPECT_EQ(c.climate(1, 3, 3), -2.0f);
    EXPECT_TRUE(c.spatial.empty());
}

TEST(PatchFeatures, MeanPercentileAndMask) {
    Tensor<float> e(1, 4, 4);
    for (std::int64_t y = 0; y < 4; ++y) {
        for (std::int64_t x = 0; x < 4; ++x) {
            e(0, y, x) = static_cast<float>(y * 4 + x);
        }
    }
    const auto f = coarse_patch_features(e, 2);
    ASSERT_EQ(f.channels(), 3);
    EXPECT_EQ(f.height(), 2);
    EXPECT_FLOAT_EQ(f(0, 0, 0), (0.0f + 1 + 4 + 5) / 4);
    EXPECT_EQ(f(1, 0, 0), 0.0f);
    EXPECT_EQ(f(1, 1, 1), 10.0f);
    EXPECT_EQ(f(2, 1, 0), 1.0f);
    EXPECT_THROW(coarse_patch_features(e, 3), ShapeError);
}

TEST(PatchFeatures, PercentileRank) {
    EXPECT_EQ(p5_rank(1), 0u);
    EXPECT_EQ(p5_rank(20), 0u);
    EXPECT_EQ(p5_rank(21), 1u);
    EXPECT_EQ(p5_rank(100), 4u);
}
