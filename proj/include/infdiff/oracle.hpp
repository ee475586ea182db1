#ifndef INFDIFF_ORACLE_HPP
#define INFDIFF_ORACLE_HPP

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <set>
#include <stdexcept>
#include <vector>

#include "denoiser.hpp"
#include "grid.hpp"
#include "rng.hpp"
#include "tensor.hpp"

/**
 * @file oracle.hpp
 * @brief Slow, direct reference implementations used to check the lazy engine.
 *
 * Nothing here touches the tensor store or the sampler. Window sets are found by exhaustive scans and all
 * arithmetic is in double.
 */

namespace infdiff::oracle {

/// A finite canvas with explicit lattice bounds.
struct DenseCanvas {
    Tensor<double> data;
    Region bounds;
};

/// Every window index within `radius` of the origin (in index units) whose region intersects `r`.
inline std::set<WindowIndex> brute_kappa(const WindowLayout& layout, const Region& r, std::int64_t radius) {
    std::set<WindowIndex> out;
    for (std::int64_t j = -radius; j <= radius; ++j) {
        for (std::int64_t i = -radius; i <= radius; ++i) {
            const WindowIndex w{i, j};
            if (window_region(layout, w).intersects(r)) {
                out.insert(w);
            }
        }
    }
    return out;
}

/// Search radius large enough for `brute_kappa` to find every window overlapping `r`.
inline std::int64_t kappa_search_radius(const WindowLayout& layout, const Region& r) {
    const std::int64_t far = std::max({std::abs(r.x0 - layout.offset_x), std::abs(r.x1() - layout.offset_x), std::abs(r.y0 - layout.offset_y), std::abs(r.y1() - layout.offset_y)});
    return far / layout.stride + layout.window / layout.stride + 2;
}

using ConditioningFn = std::function<Conditioning<double>(const WindowIndex&)>;

/**
 * @brief One fusion step over a finite canvas.
 *
 * Returns, over `target`, the weighted average of `W_i * Phi(canvas[R_i] | y_i, t)` across all windows meeting
 * `target`, accumulated per pixel in `(j, i)` order from zero. Every such window must lie inside the canvas.
 */
inline DenseCanvas dense_multidiffusion_step(const DenseCanvas& canvas, const WindowLayout& layout, const WeightMap& weights, const DenoiserSpec& denoiser, int t, const Region& target,
                                             const ConditioningFn& conditioning = {}, std::uint64_t* phi_calls = nullptr) {
    const int channels = canvas.data.channels();
    Tensor<double> num(channels, target.height, target.width);
    Tensor<double> den(1, target.height, target.width);

    const std::int64_t radius = kappa_search_radius(layout, target);
    for (std::int64_t j = -radius; j <= radius; ++j) {
        for (std::int64_t i = -radius; i <= radius; ++i) {
            const WindowIndex w{i, j};
            const Region wr = window_region(layout, w);
            if (!wr.intersects(target)) {
                continue;
            }
            if (!canvas.bounds.contains(wr)) {
                throw std::invalid_argument("oracle canvas " + canvas.bounds.str() + " does not contain window " + wr.str());
            }
            Tensor<double> x(channels, wr.height, wr.width);
            for (int c = 0; c < channels; ++c) {
                for (std::int64_t y = 0; y < wr.height; ++y) {
                    for (std::int64_t px = 0; px < wr.width; ++px) {
                        x(c, y, px) = canvas.data(c, wr.y0 - canvas.bounds.y0 + y, wr.x0 - canvas.bounds.x0 + px);
                    }
                }
            }
            const Tensor<double> phi = apply(denoiser, x, conditioning ? conditioning(w) : Conditioning<double>{}, t);
            if (phi_calls != nullptr) {
                ++*phi_calls;
            }
            for (std::int64_t y = 0; y < wr.height; ++y) {
                for (std::int64_t px = 0; px < wr.width; ++px) {
                    const std::int64_t gx = wr.x0 + px;
                    const std::int64_t gy = wr.y0 + y;
                    if (!target.contains(gx, gy)) {
                        continue;
                    }
                    const double wt = weights(y, px);
                    for (int c = 0; c < channels; ++c) {
                        num(c, gy - target.y0, gx - target.x0) += wt * phi(c, y, px);
                    }
                    den(0, gy - target.y0, gx - target.x0) += wt;
                }
            }
        }
    }

    DenseCanvas out{Tensor<double>(channels, target.height, target.width), target};
    for (int c = 0; c < channels; ++c) {
        for (std::int64_t y = 0; y < target.height; ++y) {
            for (std::int64_t px = 0; px < target.width; ++px) {
                const double d = den(0, y, px);
                out.data(c, y, px) = d == 0.0 ? 0.0 : num(c, y, px) / d;
            }
        }
    }
    return out;
}

/// Bounding box of every window meeting `r`, found by exhaustive scan.
inline Region brute_cover(const WindowLayout& layout, const Region& r) {
    const auto windows = brute_kappa(layout, r, kappa_search_radius(layout, r));
    Region box = window_region(layout, *windows.begin());
    for (const auto& w : windows) {
        box = box.bounding_union(window_region(layout, w));
    }
    return box;
}

struct DenseRun {
    std::vector<DenseCanvas> levels;
    std::uint64_t phi_calls = 0;
};

/**
 * @brief Dense evaluation of every level for a query of `r`.
 *
 * Level `t` is computed over `C_t`, with `C_0 = r` and `C_{t+1}` the cover of `C_t`'s windows. `J_T` is `base`
 * over `C_T`. Entry `t` of the result holds `J_t` over `C_t`.
 */
inline DenseRun dense_trajectory(int steps, const std::function<const WindowLayout&(int)>& layout, const std::function<const WeightMap&(int)>& weights, const DenoiserSpec& denoiser,
                                 const std::function<Tensor<double>(const Region&)>& base, const Region& r, const std::function<ConditioningFn(int)>& conditioning = {}) {
    std::vector<Region> canvas(static_cast<std::size_t>(steps + 1), r);
    for (int t = 0; t < steps; ++t) {
        canvas[static_cast<std::size_t>(t + 1)] = brute_cover(layout(t), canvas[static_cast<std::size_t>(t)]);
    }
    DenseRun run;
    run.levels.resize(static_cast<std::size_t>(steps + 1));
    const Region top = canvas[static_cast<std::size_t>(steps)];
    run.levels[static_cast<std::size_t>(steps)] = DenseCanvas{base(top), top};
    for (int t = steps - 1; t >= 0; --t) {
        run.levels[static_cast<std::size_t>(t)] = dense_multidiffusion_step(run.levels[static_cast<std::size_t>(t + 1)], layout(t), weights(t), denoiser, t + 1, canvas[static_cast<std::size_t>(t)],
                                                                            conditioning ? conditioning(t) : ConditioningFn{}, &run.phi_calls);
    }
    return run;
}

/// Gaussian noise as double, for use as the oracle's `J_T`.
inline std::function<Tensor<double>(const Region&)> noise_base(const NoiseStream& stream, int channels) {
    return [stream, channels](const Region& r) {
        Tensor<double> out(channels, r.height, r.width);
        for (int c = 0; c < channels; ++c) {
            for (std::int64_t y = 0; y < r.height; ++y) {
                for (std::int64_t x = 0; x < r.width; ++x) {
                    out(c, y, x) = static_cast<double>(noise_at(stream, r.x0 + x, r.y0 + y, c));
                }
            }
        }
        return out;
    };
}

/**
 * Denoiser calls made by the recursion without any caching: every window of level `t` meeting `r` costs one call
 * plus the cost of querying its own region at level `t + 1`.
 */
inline std::uint64_t count_phi_calls_naive(int steps, const std::function<const WindowLayout&(int)>& layout, const Region& r, int t = 0) {
    if (t >= steps) {
        return 0;
    }
    std::uint64_t total = 0;
    for (const auto& w : brute_kappa(layout(t), r, kappa_search_radius(layout(t), r))) {
        total += 1 + count_phi_calls_naive(steps, layout, window_region(layout(t), w), t + 1);
    }
    return total;
}

/// `K = M + M^2 + ... + M^T`.
inline std::uint64_t cost_bound(std::uint64_t m, int steps) {
    std::uint64_t k = 0;
    std::uint64_t power = 1;
    for (int t = 0; t < steps; ++t) {
        power *= m;
        k += power;
    }
    return k;
}

} // namespace infdiff::oracle

#endif
