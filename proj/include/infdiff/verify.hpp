#ifndef INFDIFF_VERIFY_HPP
#define INFDIFF_VERIFY_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "config.hpp"
#include "grid.hpp"
#include "oracle.hpp"
#include "sampler.hpp"
#include "tensor.hpp"
#include "tensorstore.hpp"
#include "transforms.hpp"

/**
 * @file verify.hpp
 * @brief Executable property checks over a run configuration, plus comparison helpers.
 */

namespace infdiff {

/// Bitwise equality of shape and contents.
template <class T>
bool bitwise_equal(const Tensor<T>& a, const Tensor<T>& b) {
    return a.same_shape(b) && std::memcmp(a.values().data(), b.values().data(), a.size() * sizeof(T)) == 0;
}

/// `max |a - b| / max |b|`; 0 when both are zero.
template <class A, class B>
double max_relative_deviation(const Tensor<A>& a, const Tensor<B>& b) {
    if (a.channels() != b.channels() || a.height() != b.height() || a.width() != b.width()) {
        return std::numeric_limits<double>::infinity();
    }
    double diff = 0.0;
    double scale = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        diff = std::max(diff, std::fabs(static_cast<double>(a.values()[k]) - static_cast<double>(b.values()[k])));
        scale = std::max(scale, std::fabs(static_cast<double>(b.values()[k])));
    }
    if (diff == 0.0) {
        return 0.0;
    }
    return scale == 0.0 ? std::numeric_limits<double>::infinity() : diff / scale;
}

/// Sampler settings for stage `k` of a run configuration, unconditioned and driven by pure noise.
template <class T>
SamplerConfig<T> sampler_config_from_stage(const RunConfig& cfg, std::size_t k, CacheMethod cache, std::optional<std::size_t> cache_limit = std::nullopt) {
    const StageSpec& s = cfg.stages.at(k);
    SamplerConfig<T> sc;
    sc.name = s.name.empty() ? "stage" + std::to_string(k) : s.name;
    sc.steps = s.steps;
    for (const auto& l : s.layouts) {
        sc.levels.push_back(StepSettings{l, s.weights.build(l.window)});
    }
    sc.denoiser = s.denoiser;
    sc.channels = s.channels;
    sc.seed = Seed{cfg.seed};
    sc.stream = stream_id(static_cast<std::uint32_t>(k), StreamPurpose::base_noise);
    sc.fill_stream = stream_id(static_cast<std::uint32_t>(k), StreamPurpose::climate_fill);
    sc.cache_method = cache;
    sc.cache_limit = cache_limit;
    return sc;
}

/// `K = M_0 + M_0 M_1 + ... + M_0 ... M_{T-1}` for per-level overlap bounds `M_t`.
template <class T>
std::uint64_t sampler_cost_bound(const SamplerConfig<T>& sc) {
    std::uint64_t k = 0;
    std::uint64_t product = 1;
    for (int t = 0; t < sc.steps; ++t) {
        product *= static_cast<std::uint64_t>(max_window_overlap(sc.level(t).layout));
        k += product;
    }
    return k;
}

/// Translation period of the window lattices of all levels.
template <class T>
std::int64_t sampler_period(const SamplerConfig<T>& sc) {
    std::int64_t p = 1;
    for (int t = 0; t < sc.steps; ++t) {
        p = std::lcm(p, sc.level(t).layout.stride);
    }
    return p;
}

struct CheckResult {
    std::string name;
    bool passed = false;
    std::string detail;

    std::string line() const { return std::string(passed ? "PASS" : "FAIL") + " " + name + (detail.empty() ? "" : " " + detail); }
};

namespace verify_detail {

inline std::string fmt(double v) {
    std::ostringstream os;
    os.precision(6);
    os << v;
    return os.str();
}

template <class T>
std::function<const WindowLayout&(int)> layout_fn(const SamplerConfig<T>& sc) {
    return [&sc](int t) -> const WindowLayout& { return sc.level(t).layout; };
}

template <class T>
std::function<const WeightMap&(int)> weight_fn(const SamplerConfig<T>& sc) {
    return [&sc](int t) -> const WeightMap& { return sc.level(t).weights; };
}

} // namespace verify_detail

/**
 * Lazy sampler against the dense oracle over `canvas` at every level: float engine within `tolerance` relative
 * deviation, double engine exactly.
 */
inline std::vector<CheckResult> check_oracle(const RunConfig& cfg, const Region& canvas, double tolerance = 1e-5) {
    using namespace verify_detail;
    const auto fsc = sampler_config_from_stage<float>(cfg, 0, CacheMethod::indirect);
    const auto dsc = sampler_config_from_stage<double>(cfg, 0, CacheMethod::indirect);
    const auto run = oracle::dense_trajectory(dsc.steps, layout_fn(dsc), weight_fn(dsc), dsc.denoiser, oracle::noise_base(NoiseStream{dsc.seed, dsc.stream}, dsc.channels), canvas);

    TileStore fstore(StoreOptions{64, 1, std::nullopt});
    ShadowTileStore dstore(StoreOptions{64, 1, std::nullopt});
    Sampler fs(fstore, fsc);
    ShadowSampler ds(dstore, dsc);
    fs.query(0, canvas);
    ds.query(0, canvas);

    double worst = 0.0;
    bool exact = true;
    for (int t = 0; t <= dsc.steps; ++t) {
        const auto& level = run.levels[static_cast<std::size_t>(t)];
        worst = std::max(worst, max_relative_deviation(fs.query(t, level.bounds), level.data));
        exact = exact && bitwise_equal(ds.query(t, level.bounds), level.data);
    }
    return {
        CheckResult{"oracle.float", worst <= tolerance, "max_rel_dev=" + fmt(worst) + " tolerance=" + fmt(tolerance) + " levels=" + std::to_string(dsc.steps + 1)},
        CheckResult{"oracle.shadow", exact, std::string("bit_exact=") + (exact ? "yes" : "no")},
    };
}

/// Random regions within a neighbourhood of the origin.
inline std::vector<Region> random_regions(std::uint64_t seed, std::size_t count, std::int64_t extent, std::int64_t min_size, std::int64_t max_size) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::int64_t> size(min_size, max_size);
    std::vector<Region> out;
    for (std::size_t k = 0; k < count; ++k) {
        const std::int64_t w = size(rng);
        const std::int64_t h = size(rng);
        std::uniform_int_distribution<std::int64_t> x(-extent / 2, extent / 2 - w);
        std::uniform_int_distribution<std::int64_t> y(-extent / 2, extent / 2 - h);
        out.emplace_back(x(rng), y(rng), w, h);
    }
    return out;
}

/**
 * Each region's output is bit-identical across `permutations` random query orders, for both caching methods,
 * and equal to a fresh single-region evaluation.
 */
inline std::vector<CheckResult> check_order(const RunConfig& cfg, std::size_t regions = 8, std::int64_t extent = 1024, std::size_t permutations = 10) {
    const auto rs = random_regions(cfg.seed ^ 0x5EEDULL, regions, extent, 16, 96);
    std::vector<Tensor<float>> reference;
    for (const auto& r : rs) {
        TileStore store(StoreOptions{64, 1, std::nullopt});
        Sampler s(store, sampler_config_from_stage<float>(cfg, 0, CacheMethod::indirect));
        reference.push_back(s.query(0, r));
    }
    std::mt19937_64 rng(cfg.seed ^ 0x0DDEULL);
    std::vector<CheckResult> out;
    for (CacheMethod method : {CacheMethod::indirect, CacheMethod::direct}) {
        std::size_t mismatches = 0;
        for (std::size_t p = 0; p < permutations; ++p) {
            std::vector<std::size_t> order(rs.size());
            std::iota(order.begin(), order.end(), std::size_t{0});
            std::shuffle(order.begin(), order.end(), rng);
            TileStore store(StoreOptions{64, 1, std::nullopt});
            Sampler s(store, sampler_config_from_stage<float>(cfg, 0, method));
            for (auto k : order) {
                if (!bitwise_equal(s.query(0, rs[k]), reference[k])) {
                    ++mismatches;
                }
            }
        }
        out.push_back(CheckResult{std::string("order.") + to_string(method), mismatches == 0,
                                  "regions=" + std::to_string(regions) + " permutations=" + std::to_string(permutations) + " mismatches=" + std::to_string(mismatches)});
    }
    return out;
}

/**
 * Fresh-state denoiser calls for a window region are at most `K` and identical at `positions` random lattice
 * positions up to `reach` from the origin; the uncached recursion is never cheaper.
 */
inline std::vector<CheckResult> check_cost(const RunConfig& cfg, std::size_t positions = 100, std::int64_t reach = 1000000) {
    const auto sc = sampler_config_from_stage<float>(cfg, 0, CacheMethod::indirect);
    const std::uint64_t bound = sampler_cost_bound(sc);
    const auto& layout = sc.level(0).layout;
    std::mt19937_64 rng(cfg.seed ^ 0xC057ULL);
    const std::int64_t period = std::lcm(sampler_period(sc), layout.stride) / layout.stride;
    std::uniform_int_distribution<std::int64_t> idx(-reach / layout.stride / period, reach / layout.stride / period);

    std::vector<std::uint64_t> counts;
    for (std::size_t k = 0; k < positions; ++k) {
        const WindowIndex w{idx(rng) * period, idx(rng) * period};
        TileStore store(StoreOptions{64, 1, std::nullopt});
        Sampler s(store, sc);
        s.query(0, window_region(layout, w));
        counts.push_back(s.total_phi_calls());
    }
    const auto [lo, hi] = std::minmax_element(counts.begin(), counts.end());
    const std::uint64_t naive = oracle::count_phi_calls_naive(sc.steps, verify_detail::layout_fn(sc), window_region(layout, WindowIndex{0, 0}));
    return {
        CheckResult{"cost.bound", *hi <= bound, "measured=" + std::to_string(*hi) + " K=" + std::to_string(bound)},
        CheckResult{"cost.invariant", *lo == *hi, "positions=" + std::to_string(positions) + " min=" + std::to_string(*lo) + " max=" + std::to_string(*hi)},
        CheckResult{"cost.naive", naive >= *hi, "naive=" + std::to_string(naive) + " cached=" + std::to_string(*hi)},
    };
}

/// Signed square root round trip, Laplacian identity, and the three normalization examples.
inline std::vector<CheckResult> check_transforms(std::uint64_t seed) {
    using verify_detail::fmt;
    std::mt19937_64 rng(seed);
    std::vector<CheckResult> out;

    std::uniform_real_distribution<float> elev(-11000.0f, 9000.0f);
    double worst = 0.0;
    for (int k = 0; k < 100000; ++k) {
        const float x = elev(rng);
        worst = std::max(worst, std::fabs(static_cast<double>(signed_square(signed_sqrt(x))) - static_cast<double>(x)));
    }
    out.push_back(CheckResult{"transforms.signed_sqrt", worst <= 1e-3, "max_abs_err=" + fmt(worst)});

    std::normal_distribution<float> normal(0.0f, 100.0f);
    std::size_t failures = 0;
    for (int k = 0; k < 100; ++k) {
        Tensor<float> x(1, 32, 32);
        for (auto& v : x.values()) {
            v = normal(rng);
        }
        if (!bitwise_equal(laplacian_decode(laplacian_encode(x, 8, 2)), x)) {
            ++failures;
        }
    }
    out.push_back(CheckResult{"transforms.laplacian", failures == 0, "tensors=100 failures=" + std::to_string(failures)});

    Tensor<float> constant(1, 4, 4, 100.0f);
    Tensor<float> span255(1, 1, 2);
    span255.values() = {0.0f, 255.0f};
    Tensor<float> span1000(1, 1, 2);
    span1000.values() = {0.0f, 1000.0f};
    const auto a = normalize_heightmap_u8(constant);
    const auto b = normalize_heightmap_u8(span255);
    const auto c = normalize_heightmap_u8(span1000);
    const bool ok = std::all_of(a.values().begin(), a.values().end(), [](std::uint8_t v) { return v == 128; }) && b(0, 0, 0) == 0 && b(0, 0, 1) == 255 && c(0, 0, 0) == 0 && c(0, 0, 1) == 255;
    out.push_back(CheckResult{"transforms.normalize", ok, "constant100=" + std::to_string(a(0, 0, 0)) + " span255=" + std::to_string(b(0, 0, 0)) + "/" + std::to_string(b(0, 0, 1)) +
                                                          " span1000=" + std::to_string(c(0, 0, 0)) + "/" + std::to_string(c(0, 0, 1))});
    return out;
}

inline std::vector<CheckResult> run_verify(const RunConfig& cfg, const std::string& mode) {
    if (mode == "oracle") {
        return check_oracle(cfg, Region(0, 0, 64, 64));
    }
    if (mode == "order") {
        return check_order(cfg);
    }
    if (mode == "cost") {
        return check_cost(cfg);
    }
    if (mode == "transforms") {
        return check_transforms(cfg.seed);
    }
    throw ConfigError("unknown verify mode '" + mode + "' (expected oracle, order, cost or transforms)");
}

} // namespace infdiff

#endif
