#ifndef INFDIFF_BENCH_HPP
#define INFDIFF_BENCH_HPP

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "config.hpp"
#include "pipeline.hpp"
#include "tensorstore.hpp"

/**
 * @file bench.hpp
 * @brief Time-to-first-tile and time-to-second-tile measurements.
 *
 * For each trial a fresh store and pipeline are built, a region is generated at a random lattice-aligned
 * location (TTFT), then the region shifted right by its width (TTST). Denoiser call counts are recorded
 * alongside the wall times.
 */

namespace infdiff {

struct Summary {
    double mean = 0.0;
    double std = 0.0;
    double p5 = 0.0;
    double p50 = 0.0;
    double p95 = 0.0;
};

/// Percentile with linear interpolation between closest ranks.
inline double percentile(std::vector<double> values, double p) {
    if (values.empty()) {
        return 0.0;
    }
    std::sort(values.begin(), values.end());
    const double pos = p / 100.0 * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return values[lo] + (values[hi] - values[lo]) * frac;
}

/// Mean, population standard deviation and percentiles.
inline Summary summarize(const std::vector<double>& values) {
    Summary s;
    if (values.empty()) {
        return s;
    }
    const double n = static_cast<double>(values.size());
    s.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
    double var = 0.0;
    for (double v : values) {
        var += (v - s.mean) * (v - s.mean);
    }
    s.std = std::sqrt(var / n);
    s.p5 = percentile(values, 5);
    s.p50 = percentile(values, 50);
    s.p95 = percentile(values, 95);
    return s;
}

struct BenchReport {
    std::int64_t width = 0;
    std::int64_t height = 0;
    std::vector<Region> locations;
    std::vector<double> ttft_ms;
    std::vector<double> ttst_ms;
    std::vector<std::uint64_t> ttft_phi;
    std::vector<std::uint64_t> ttst_phi;
};

/// Translation period of every window lattice in the pipeline, in finest-stage pixels.
inline std::int64_t pipeline_period(const PipelineConfig& p) {
    std::int64_t period = 1;
    for (std::size_t k = 0; k < p.stages.size(); ++k) {
        const auto& s = p.stages[k];
        std::int64_t stage = k == 0 ? 1 : period * s.scale;
        if (k > 0 && s.recipe == ConditioningRecipe::patch_features) {
            stage = std::lcm(stage, s.scale * p.feature_patch * p.feature_window);
        }
        for (const auto& l : s.levels) {
            stage = std::lcm(stage, l.layout.stride);
        }
        period = stage;
    }
    return period;
}

inline BenchReport run_bench(const RunConfig& cfg, const PipelineConfig& pipeline, std::int64_t width, std::int64_t height, std::size_t trials, unsigned threads) {
    BenchReport report;
    report.width = width;
    report.height = height;
    const std::int64_t period = pipeline_period(pipeline);
    std::mt19937_64 rng(cfg.seed ^ 0xBE7C4ULL);
    std::uniform_int_distribution<std::int64_t> cell(-100000 / period, 100000 / period);
    using clock = std::chrono::steady_clock;
    for (std::size_t k = 0; k < trials; ++k) {
        const Region first(cell(rng) * period, cell(rng) * period, width, height);
        const Region second = first.translated(width, 0);
        StoreOptions options = to_store_options(cfg, threads);
        options.path.reset();
        TileStore store(options);
        Pipeline p(store, pipeline, Seed{cfg.seed});

        const auto t0 = clock::now();
        p.read(first);
        const auto t1 = clock::now();
        const std::uint64_t after_first = p.total_phi_calls();
        p.read(second);
        const auto t2 = clock::now();

        report.locations.push_back(first);
        report.ttft_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
        report.ttst_ms.push_back(std::chrono::duration<double, std::milli>(t2 - t1).count());
        report.ttft_phi.push_back(after_first);
        report.ttst_phi.push_back(p.total_phi_calls() - after_first);
    }
    return report;
}

inline std::string format_bench(const BenchReport& r) {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(3);
    auto line = [&](const char* name, const std::vector<double>& v) {
        const Summary s = summarize(v);
        os << name << " mean=" << s.mean << " std=" << s.std << " p5=" << s.p5 << " p50=" << s.p50 << " p95=" << s.p95 << "\n";
    };
    auto phi = [&](const char* name, const std::vector<std::uint64_t>& v) {
        const bool same = std::adjacent_find(v.begin(), v.end(), std::not_equal_to<>()) == v.end();
        os << name << " count=" << (v.empty() ? 0 : v.front()) << " min=" << (v.empty() ? 0 : *std::min_element(v.begin(), v.end()))
           << " max=" << (v.empty() ? 0 : *std::max_element(v.begin(), v.end())) << " identical=" << (same ? "yes" : "no") << "\n";
    };
    os << "bench trials=" << r.ttft_ms.size() << " region=" << r.width << "x" << r.height << "\n";
    line("ttft_ms", r.ttft_ms);
    line("ttst_ms", r.ttst_ms);
    phi("phi_ttft", r.ttft_phi);
    phi("phi_ttst", r.ttst_phi);
    return os.str();
}

} // namespace infdiff

#endif
