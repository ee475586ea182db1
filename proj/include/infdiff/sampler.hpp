#ifndef INFDIFF_SAMPLER_HPP
#define INFDIFF_SAMPLER_HPP

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "denoiser.hpp"
#include "grid.hpp"
#include "parallel.hpp"
#include "rng.hpp"
#include "tensor.hpp"
#include "tensorstore.hpp"

/**
 * @file sampler.hpp
 * @brief Lazy, region-queryable sliding-window diffusion over the unbounded lattice.
 *
 * For each level `t` in `[0, T)` the sampler keeps an accumulator tensor `A_t` whose last channel holds the summed
 * weights `B_t`. Window `i` of level `t` contributes `[W_i * Phi(J_{t+1}[R_i] | y_i, t + 1), W_i]`, and
 * `J_t = A_t / B_t` with `0 / 0 = 0`. `J_T` is the seeded noise field. Windows are generated on demand when a
 * region is queried, recursively pulling the level above through the tensor store.
 */

namespace infdiff {

/// Window layout and blending weights for one level.
struct StepSettings {
    WindowLayout layout;
    WeightMap weights;

    void validate() const {
        layout.validate();
        if (weights.size() != layout.window) {
            throw std::invalid_argument("weight map size " + std::to_string(weights.size()) + " does not match window size " + std::to_string(layout.window));
        }
    }
};

/// Values of a deterministic field over a region.
template <class T>
using FieldFunction = std::function<Tensor<T>(const Region&)>;

/**
 * @brief Where conditioning comes from.
 *
 * Either a registered tensor (read through the store with `margin`; set `accumulator` when its last channel
 * holds weights) or a pure field function. `scale` child pixels share one source pixel.
 */
template <class T>
struct ConditioningSource {
    std::optional<TensorHandle> tensor;
    FieldFunction<T> field;
    bool accumulator = false;
    std::int64_t margin = 0;
    std::int64_t scale = 1;
    std::optional<int> mask_channel;
    std::vector<double> scalars;
};

template <class T>
struct SamplerConfig {
    std::string name = "sampler";
    int steps = 1;
    /// Entry `t` configures the windows of level `t`; a single entry applies to every level.
    std::vector<StepSettings> levels;
    DenoiserSpec denoiser;
    int channels = 1;
    Seed seed;
    std::uint32_t stream = stream_id(0, StreamPurpose::base_noise);
    std::uint32_t fill_stream = stream_id(0, StreamPurpose::climate_fill);
    CacheMethod cache_method = CacheMethod::indirect;
    std::optional<std::size_t> cache_limit;
    /// Replaces the Gaussian noise `J_T`, e.g. with a corrupted user map.
    FieldFunction<T> base_field;
    std::optional<ConditioningSource<T>> conditioning;

    const StepSettings& level(int t) const {
        return levels.size() == 1 ? levels.front() : levels.at(static_cast<std::size_t>(t));
    }

    void validate() const {
        if (steps < 1) {
            throw std::invalid_argument("sampler needs at least one step");
        }
        if (channels < 1) {
            throw std::invalid_argument("sampler needs at least one channel");
        }
        if (levels.empty() || (levels.size() != 1 && levels.size() != static_cast<std::size_t>(steps))) {
            throw std::invalid_argument("sampler needs one level setting or one per step (" + std::to_string(steps) + ")");
        }
        for (const auto& l : levels) {
            l.validate();
        }
        denoiser.validate();
        if (denoiser.channels != channels) {
            throw std::invalid_argument("denoiser channel count does not match sampler channels");
        }
        if (conditioning) {
            if (conditioning->tensor.has_value() == static_cast<bool>(conditioning->field)) {
                throw std::invalid_argument("conditioning needs exactly one of a tensor or a field function");
            }
            if (conditioning->scale < 1 || conditioning->margin < 0) {
                throw std::invalid_argument("conditioning scale must be >= 1 and margin >= 0");
            }
        }
    }
};

/// Windows of one level that can be evaluated together.
struct Round {
    int level = 0;
    std::vector<WindowIndex> windows;
};

/**
 * @brief Engine for one sampler configuration inside a tensor store.
 *
 * Constructing a sampler registers its tensors, or reuses them when a sampler with the same name already lives in
 * the store. The sampler object itself is a lightweight view; all state is owned by the store.
 */
template <class T>
class BasicSampler {
    struct Core {
        SamplerConfig<T> config;
        std::vector<TensorHandle> handles;
        std::unique_ptr<std::atomic<std::uint64_t>[]> phi_calls;
    };

public:
    BasicSampler(BasicTileStore<T>& store, SamplerConfig<T> config) : store_(&store) {
        config.validate();
        if (auto existing = store.find(tensor_name(config.name, 0))) {
            core_ = std::static_pointer_cast<Core>(store.attachment(*existing));
            if (!core_) {
                throw StoreConfigError("tensor '" + tensor_name(config.name, 0) + "' exists but does not belong to a sampler");
            }
            return;
        }
        core_ = std::make_shared<Core>();
        core_->config = std::move(config);
        core_->phi_calls = std::make_unique<std::atomic<std::uint64_t>[]>(static_cast<std::size_t>(core_->config.steps + 1));
        register_tensors(store);
    }

    static std::string tensor_name(const std::string& name, int t) {
        return name + ".A" + std::to_string(t);
    }

    const SamplerConfig<T>& config() const { return core_->config; }
    int steps() const { return core_->config.steps; }

    /// Accumulator tensor of level `t`, channels `[data..., weight]`.
    TensorHandle accumulator(int t) const {
        check_level(t);
        return core_->handles[static_cast<std::size_t>(t)];
    }

    /// `J_t[r]`, generating whatever windows are missing.
    Tensor<T> query(int t, const Region& r) {
        if (t < 0 || t > steps()) {
            throw std::out_of_range("step " + std::to_string(t) + " outside [0, " + std::to_string(steps()) + "]");
        }
        if (t == steps()) {
            return base_field(core_->config, r);
        }
        return divide_by_weight(store_->read(accumulator(t), r));
    }

    /// Number of denoiser calls made at outer step `t` in `[1, T]`.
    std::uint64_t phi_call_count(int t) const {
        if (t < 1 || t > steps()) {
            return 0;
        }
        return core_->phi_calls[static_cast<std::size_t>(t)].load();
    }

    std::uint64_t total_phi_calls() const {
        std::uint64_t total = 0;
        for (int t = 1; t <= steps(); ++t) {
            total += phi_call_count(t);
        }
        return total;
    }

    /**
     * Schedule for serving `J_t[r]`: one round per level, deepest first. Every window of a round depends only on
     * levels produced by earlier rounds, so a round's windows may be evaluated in any order or concurrently.
     * Yields at most `T - t` rounds.
     */
    std::vector<Round> plan_rounds(int t, const Region& r) const {
        if (t < 0 || t > steps()) {
            throw std::out_of_range("step " + std::to_string(t) + " outside [0, " + std::to_string(steps()) + "]");
        }
        std::vector<Round> rounds;
        Region need = r;
        for (int level = t; level < steps(); ++level) {
            auto pending = store_->pending_windows(accumulator(level), need);
            if (pending.empty()) {
                break;
            }
            const auto& layout = core_->config.level(level).layout;
            Region cover = window_region(layout, pending.front());
            for (const auto& w : pending) {
                cover = cover.bounding_union(window_region(layout, w));
            }
            rounds.push_back(Round{level, std::move(pending)});
            need = cover;
        }
        std::reverse(rounds.begin(), rounds.end());
        return rounds;
    }

    void run_rounds(const std::vector<Round>& rounds, const Executor& exec) {
        for (const auto& round : rounds) {
            store_->materialize(accumulator(round.level), round.windows, exec);
        }
    }

    /// Evaluates `J_t[r]` round by round with `exec` running each round's windows.
    Tensor<T> query_parallel(int t, const Region& r, const Executor& exec) {
        run_rounds(plan_rounds(t, r), exec);
        return query(t, r);
    }

    BasicTileStore<T>& store() const { return *store_; }

private:
    void check_level(int t) const {
        if (t < 0 || t >= steps()) {
            throw std::out_of_range("no accumulator for level " + std::to_string(t));
        }
    }

    static Tensor<T> base_field(const SamplerConfig<T>& config, const Region& r) {
        if (config.base_field) {
            Tensor<T> out = config.base_field(r);
            if (out.channels() != config.channels || out.height() != r.height || out.width() != r.width) {
                throw ShapeError("base field returned shape " + out.shape_str() + " for region " + r.str());
            }
            return out;
        }
        return noise_region<T>(NoiseStream{config.seed, config.stream}, r, config.channels);
    }

    static Dependency conditioning_dependency(const ConditioningSource<T>& source) {
        return Dependency{source.tensor.value_or(TensorHandle{}), source.margin, source.scale, 1};
    }

    void register_tensors(BasicTileStore<T>& store) {
        const auto& config = core_->config;
        const int levels = config.steps;
        core_->handles.assign(static_cast<std::size_t>(levels), TensorHandle{});
        std::shared_ptr<Core> core = core_;

        for (int t = levels - 1; t >= 0; --t) {
            const StepSettings& settings = config.level(t);
            TensorSpec spec;
            spec.name = tensor_name(config.name, t);
            spec.channels = config.channels + 1;
            spec.layout = settings.layout;
            spec.cache_method = config.cache_method;
            if (config.cache_method == CacheMethod::direct) {
                spec.cache_limit = config.cache_limit;
            }
            const bool from_noise = t + 1 == levels;
            if (!from_noise) {
                spec.dependencies.push_back(Dependency{core_->handles[static_cast<std::size_t>(t + 1)], 0, 1, 1});
            }
            const bool tensor_conditioning = config.conditioning && config.conditioning->tensor;
            if (tensor_conditioning) {
                spec.dependencies.push_back(conditioning_dependency(*config.conditioning));
            }

            Generator<T> gen = [core, t, from_noise, tensor_conditioning](const WindowIndex& w, std::span<const Tensor<T>> parents) {
                const SamplerConfig<T>& cfg = core->config;
                const StepSettings& level = cfg.level(t);
                const Region wr = window_region(level.layout, w);
                const Tensor<T> x = from_noise ? base_field(cfg, wr) : divide_by_weight(parents[0]);
                const Conditioning<T> y = make_conditioning(cfg, level.layout, w, tensor_conditioning ? &parents[from_noise ? 0 : 1] : nullptr);
                const Tensor<T> phi = apply(cfg.denoiser, x, y, t + 1);
                core->phi_calls[static_cast<std::size_t>(t + 1)].fetch_add(1);
                Tensor<T> out(cfg.channels + 1, wr.height, wr.width);
                for (std::int64_t py = 0; py < wr.height; ++py) {
                    for (std::int64_t px = 0; px < wr.width; ++px) {
                        const double weight = level.weights(py, px);
                        for (int c = 0; c < cfg.channels; ++c) {
                            out(c, py, px) = static_cast<T>(weight * static_cast<double>(phi(c, py, px)));
                        }
                        out(cfg.channels, py, px) = static_cast<T>(weight);
                    }
                }
                return out;
            };
            core_->handles[static_cast<std::size_t>(t)] = store.create_tensor(std::move(spec), std::move(gen), t == 0 ? std::static_pointer_cast<void>(core_) : nullptr);
        }
    }

    static Conditioning<T> make_conditioning(const SamplerConfig<T>& cfg, const WindowLayout& layout, const WindowIndex& w, const Tensor<T>* parent) {
        if (!cfg.conditioning) {
            return Conditioning<T>{};
        }
        const ConditioningSource<T>& src = *cfg.conditioning;
        const Region region = dependency_region(conditioning_dependency(src), window_region(layout, w));
        const NoiseStream fill{cfg.seed, cfg.fill_stream};
        if (parent != nullptr) {
            if (src.accumulator) {
                const Tensor<T> values = divide_by_weight(*parent);
                return conditioning_for_window(ParentView<T>{values, region, src.scale, src.mask_channel}, layout, w, src.scalars, fill);
            }
            return conditioning_for_window(ParentView<T>{*parent, region, src.scale, src.mask_channel}, layout, w, src.scalars, fill);
        }
        const Tensor<T> values = src.field(region);
        return conditioning_for_window(ParentView<T>{values, region, src.scale, src.mask_channel}, layout, w, src.scalars, fill);
    }

    BasicTileStore<T>* store_;
    std::shared_ptr<Core> core_;
};

using Sampler = BasicSampler<float>;
using ShadowSampler = BasicSampler<double>;

/// Builds (or reuses) the sampler for `config` in `store` and returns `J_0[r]`.
template <class T>
Tensor<T> sample(const SamplerConfig<T>& config, BasicTileStore<T>& store, const Region& r) {
    BasicSampler<T> sampler(store, config);
    return sampler.query(0, r);
}

} // namespace infdiff

#endif
