#include <gtest/gtest.h>

#include <filesystem>
#include <unistd.h>

#include "infdiff/pipeline.hpp"
#include "infdiff/raster.hpp"
#include "infdiff/verify.hpp"

using namespace infdiff;

namespace {

std::filesystem::path temp_path(const std::string& name) {
    return std::filesystem::temp_directory_path() / ("infdiff_pipe_" + name + "_" + std::to_string(::getpid()));
}

Tensor<float> test_map(std::int64_t h, std::int64_t w) {
    Tensor<float> m(1, h, w);
    for (std::int64_t y = 0; y < h; ++y) {
        for (std::int64_t x = 0; x < w; ++x) {
            m(0, y, x) = static_cast<float>(0.5 * x - 0.25 * y + ((x * 7 + y * 3) % 5));
        }
    }
    return m;
}

PipelineStage identity_stage(const std::string& name, std::int64_t window, std::int64_t scale) {
    PipelineStage s;
    s.name = name;
    s.levels = {StepSettings{WindowLayout(window, window), constant_weight_window(window)}};
    s.scale = scale;
    return s;
}

PipelineStage smooth_stage(const std::string& name, int steps, std::int64_t scale, ConditioningRecipe recipe) {
    PipelineStage s;
    s.name = name;
    s.steps = steps;
    s.levels = {StepSettings{WindowLayout(16, 8), linear_weight_window(16)}};
    s.denoiser.kind = recipe == ConditioningRecipe::none ? DenoiserKind::shrink_smooth : DenoiserKind::cond_affine;
    s.denoiser.lambda = {0.5};
    s.scale = scale;
    s.recipe = recipe;
    return s;
}

} // namespace

TEST(UserMap, RasterClampsAtEdges) {
    const auto src = UserMapSource::from_raster(test_map(4, 4), 10, 20);
    const auto t = src.sample<float>(Region(8, 19, 8, 8), Seed{1});
    const auto m = test_map(4, 4);
    EXPECT_EQ(t(0, 0, 0), m(0, 0, 0));
    EXPECT_EQ(t(0, 2, 3), m(0, 1, 1));
    EXPECT_EQ(t(0, 7, 7), m(0, 3, 3));
}

TEST(UserMap, ProceduralIsSeedConsistentAndContinuous) {
    const auto src = UserMapSource::procedural(2, 8, 3.0);
    const auto a = src.sample<double>(Region(-20, -20, 40, 40), Seed{5});
    const auto b = src.sample<double>(Region(-4, 0, 4, 4), Seed{5});
    EXPECT_EQ(a(1, 20, 16), b(1, 0, 0));
    EXPECT_LE(std::fabs(a(0, 0, 0)), 3.0);
    EXPECT_LE(std::fabs(a(0, 10, 11) - a(0, 10, 10)), 2.0 * 3.0 / 8.0 + 1e-12);
    EXPECT_NE(a(0, 5, 5), src.sample<double>(Region(-15, -15, 1, 1), Seed{6})(0, 0, 0));
}

TEST(UserMap, CorruptionZeroLevelIsExact) {
    const auto m = test_map(5, 6);
    const Region r(3, 4, 6, 5);
    EXPECT_TRUE(bitwise_equal(corrupt_user_map(m, {0.0}, NoiseStream{Seed{1}, 0}, r), m));
    const auto c = corrupt_user_map(m, {0.5}, NoiseStream{Seed{1}, 0}, r);
    EXPECT_FLOAT_EQ(c(0, 1, 2), m(0, 1, 2) + 0.5f * noise_at(NoiseStream{Seed{1}, 0}, 5, 5, 0));
    EXPECT_THROW(corrupt_user_map(m, {0.5, 0.5}, NoiseStream{Seed{1}, 0}, r), PipelineConfigError);
    EXPECT_THROW(corrupt_user_map(m, {-1.0}, NoiseStream{Seed{1}, 0}, r), PipelineConfigError);
}

TEST(Pipeline, IdentityCoarseStageReproducesUserMap) {
    PipelineConfig cfg;
    cfg.user_map = UserMapSource::from_raster(test_map(32, 32));
    cfg.stages = {identity_stage("coarse", 8, 1)};
    TileStore store(StoreOptions{64, 1, std::nullopt});
    Pipeline p(store, cfg, Seed{9});
    EXPECT_TRUE(bitwise_equal(p.read(Region(0, 0, 32, 32)), test_map(32, 32)));
}

TEST(Pipeline, ScaledIdentityStageUpsamplesUserMap) {
    PipelineConfig cfg;
    cfg.user_map = UserMapSource::from_raster(test_map(4, 4));
    cfg.stages = {identity_stage("coarse", 4, 4)};
    TileStore store(StoreOptions{64, 1, std::nullopt});
    Pipeline p(store, cfg, Seed{9});
    const auto out = p.read(Region(0, 0, 16, 16));
    const auto m = test_map(4, 4);
    EXPECT_EQ(out(0, 5, 13), m(0, 1, 3));
}

TEST(Pipeline, AdjacentReadsMatchOneWideRead) {
    PipelineConfig cfg;
    cfg.user_map = UserMapSource::procedural(1, 8, 1.0);
    cfg.stages = {smooth_stage("coarse", 1, 1, ConditioningRecipe::none), smooth_stage("fine", 2, 4, ConditioningRecipe::nearest)};
    cfg.stages[0].corruption = {0.1};
    TileStore a(StoreOptions{64, 1, std::nullopt}), b(StoreOptions{64, 1, std::nullopt});
    Pipeline pa(a, cfg, Seed{11});
    Pipeline pb(b, cfg, Seed{11});
    const Region left(-64, 32, 64, 64);
    const Region right(0, 32, 64, 64);
    const auto l = pa.read(left);
    const auto r = pa.read(right);
    const auto whole = pb.read(Region(-64, 32, 128, 64));
    EXPECT_TRUE(bitwise_equal(l, crop(whole, Region(-64, 32, 128, 64), left)));
    EXPECT_TRUE(bitwise_equal(r, crop(whole, Region(-64, 32, 128, 64), right)));
}

TEST(Pipeline, FineStageFollowsCoarseConditioning) {
    PipelineConfig cfg;
    cfg.stages = {smooth_stage("coarse", 1, 1, ConditioningRecipe::none), smooth_stage("fine", 1, 4, ConditioningRecipe::nearest)};
    cfg.stages[1].denoiser.blend = 1.0;
    TileStore store(StoreOptions{64, 1, std::nullopt});
    Pipeline p(store, cfg, Seed{2});
    const auto fine = p.read(Region(0, 0, 32, 32));
    const auto coarse = p.read_stage(0, Region(0, 0, 8, 8));
    EXPECT_LE(std::fabs(fine(0, 9, 13) - coarse(0, 2, 3)), 1e-5);
}

TEST(Pipeline, PatchFeaturesFeedTheNextStage) {
    PipelineConfig cfg;
    cfg.stages = {smooth_stage("coarse", 1, 1, ConditioningRecipe::none), smooth_stage("fine", 1, 2, ConditioningRecipe::patch_features)};
    cfg.stages[1].scalars = {0.3};
    TileStore a(StoreOptions{64, 1, std::nullopt}), b(StoreOptions{64, 1, std::nullopt});
    Pipeline pa(a, cfg, Seed{4});
    Pipeline pb(b, cfg, Seed{4});
    ASSERT_TRUE(pa.features(0).has_value());
    const auto whole = pa.read(Region(0, 0, 64, 32));
    const auto part = pb.read(Region(32, 0, 32, 32));
    EXPECT_TRUE(bitwise_equal(part, crop(whole, Region(0, 0, 64, 32), Region(32, 0, 32, 32))));
    const auto coarse = pa.read_stage(0, Region(0, 0, 16, 16));
    const auto feats = a.read(*pa.features(0), Region(0, 0, 8, 8));
    EXPECT_NEAR(feats(0, 1, 2), (coarse(0, 2, 4) + coarse(0, 2, 5) + coarse(0, 3, 4) + coarse(0, 3, 5)) / 4.0, 1e-5);
    EXPECT_EQ(feats(2, 3, 3), 1.0f);
}

TEST(Pipeline, ConfigValidation) {
    PipelineConfig cfg;
    EXPECT_THROW(cfg.validate(), PipelineConfigError);
    cfg.stages = {smooth_stage("a", 1, 1, ConditioningRecipe::patch_features)};
    EXPECT_THROW(cfg.validate(), PipelineConfigError);
    cfg.stages = {smooth_stage("a", 1, 1, ConditioningRecipe::nearest)};
    EXPECT_THROW(cfg.validate(), PipelineConfigError);
    cfg.stages = {smooth_stage("a", 1, 1, ConditioningRecipe::none), smooth_stage("a", 1, 2, ConditioningRecipe::nearest)};
    EXPECT_THROW(cfg.validate(), PipelineConfigError);
    cfg.stages = {smooth_stage("a", 1, 2, ConditioningRecipe::none)};
    EXPECT_THROW(cfg.validate(), PipelineConfigError);
    cfg.user_map = UserMapSource::procedural(2, 8, 1.0);
    EXPECT_THROW(cfg.validate(), PipelineConfigError);
}

TEST(Raster, IgusrmapRoundTrip) {
    const auto path = temp_path("map");
    Tensor<float> t(2, 3, 5);
    for (std::size_t k = 0; k < t.size(); ++k) {
        t.values()[k] = static_cast<float>(k) * -1.25f;
    }
    write_igusrmap(path, t);
    EXPECT_TRUE(bitwise_equal(read_igusrmap(path), t));
    const auto bytes = encode_igusrmap(t);
    EXPECT_EQ(bytes.size(), 20u + 4u * 30u);
    EXPECT_EQ(bytes[8], 5);
    EXPECT_EQ(bytes[12], 3);
    EXPECT_EQ(bytes[16], 2);
    auto truncated = bytes;
    truncated.pop_back();
    EXPECT_THROW(decode_igusrmap(truncated), RasterError);
    std::filesystem::remove(path);
}

TEST(Raster, PgmAndHillshade) {
    Tensor<std::uint8_t> img(1, 2, 3, 7);
    const auto pgm = encode_pgm(img);
    const std::string header = "P5\n3 2\n255\n";
    EXPECT_EQ(std::string(pgm.begin(), pgm.begin() + static_cast<std::ptrdiff_t>(header.size())), header);
    EXPECT_EQ(pgm.size(), header.size() + 6);
    const auto flat = hillshade(Tensor<float>(1, 4, 4, 10.0f));
    EXPECT_EQ(flat(0, 2, 2), 180);
    Tensor<float> slope(1, 5, 5);
    for (std::int64_t y = 0; y < 5; ++y) {
        for (std::int64_t x = 0; x < 5; ++x) {
            slope(0, y, x) = static_cast<float>(x + y);
        }
    }
    EXPECT_GT(hillshade(slope)(0, 2, 2), 180);
}

TEST(Raster, LoadUserMapFromStoreFile) {
    const auto path = temp_path("store");
    Tensor<float> expected;
    {
        TileStore store(StoreOptions{64, 1, std::nullopt});
        SamplerConfig<float> sc;
        sc.name = "map";
        sc.levels = {StepSettings{WindowLayout(16, 8), linear_weight_window(16)}};
        sc.denoiser.kind = DenoiserKind::shrink_smooth;
        Sampler s(store, sc);
        s.query(0, Region(0, 0, 32, 32));
        expected = s.query(0, Region(0, 0, 16, 16));
        store.flush(path);
    }
    const auto map = load_user_map(path);
    const auto got = map.sample<float>(Region(0, 0, 16, 16), Seed{0});
    EXPECT_TRUE(bitwise_equal(got, expected));
    std::filesystem::remove(path);
}
