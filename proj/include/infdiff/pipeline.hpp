#ifndef INFDIFF_PIPELINE_HPP
#define INFDIFF_PIPELINE_HPP

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <regex>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "denoiser.hpp"
#include "grid.hpp"
#include "raster.hpp"
#include "rng.hpp"
#include "sampler.hpp"
#include "tensor.hpp"
#include "tensorstore.hpp"

/**
 * @file pipeline.hpp
 * @brief Coarse-to-fine generation as a chain of samplers linked through the tensor store.
 *
 * Stage 0 starts from a user map corrupted with per-channel noise, or from pure noise. Each later stage runs at
 * `scale` times the resolution of the one before and is conditioned either on a nearest-neighbour crop of the
 * previous stage or on patch features (mean, 5th percentile, mask) computed from it.
 */

namespace infdiff {

enum class ConditioningRecipe { none, nearest, patch_features };

inline const char* to_string(ConditioningRecipe r) {
    switch (r) {
    case ConditioningRecipe::none:
        return "none";
    case ConditioningRecipe::nearest:
        return "nearest";
    case ConditioningRecipe::patch_features:
        return "patch_features";
    }
    return "unknown";
}

inline ConditioningRecipe recipe_from_string(const std::string& s) {
    if (s == "none") {
        return ConditioningRecipe::none;
    }
    if (s == "nearest") {
        return ConditioningRecipe::nearest;
    }
    if (s == "patch_features") {
        return ConditioningRecipe::patch_features;
    }
    throw std::invalid_argument("unknown conditioning recipe '" + s + "'");
}

class PipelineConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/**
 * @brief Deterministic coarse map: a finite raster clamped at its edges, or seeded value noise.
 */
struct UserMapSource {
    enum class Kind { raster, procedural };

    Kind kind = Kind::procedural;
    Tensor<float> raster;
    std::int64_t origin_x = 0;
    std::int64_t origin_y = 0;
    int procedural_channels = 1;
    std::int64_t cell = 16;
    double amplitude = 1.0;

    static UserMapSource from_raster(Tensor<float> data, std::int64_t origin_x = 0, std::int64_t origin_y = 0) {
        if (data.empty()) {
            throw PipelineConfigError("user map raster is empty");
        }
        UserMapSource s;
        s.kind = Kind::raster;
        s.raster = std::move(data);
        s.origin_x = origin_x;
        s.origin_y = origin_y;
        return s;
    }

    static UserMapSource procedural(int channels, std::int64_t cell, double amplitude) {
        if (channels < 1 || cell < 1) {
            throw PipelineConfigError("procedural user map needs channels >= 1 and cell >= 1");
        }
        UserMapSource s;
        s.kind = Kind::procedural;
        s.procedural_channels = channels;
        s.cell = cell;
        s.amplitude = amplitude;
        return s;
    }

    int channels() const { return kind == Kind::raster ? raster.channels() : procedural_channels; }

    /// Map values over `r` in map coordinates.
    template <class T>
    Tensor<T> sample(const Region& r, Seed seed) const {
        Tensor<T> out(channels(), r.height, r.width);
        if (kind == Kind::raster) {
            const std::int64_t h = raster.height();
            const std::int64_t w = raster.width();
            for (int c = 0; c < channels(); ++c) {
                for (std::int64_t y = 0; y < r.height; ++y) {
                    const std::int64_t sy = std::clamp<std::int64_t>(r.y0 + y - origin_y, 0, h - 1);
                    for (std::int64_t x = 0; x < r.width; ++x) {
                        const std::int64_t sx = std::clamp<std::int64_t>(r.x0 + x - origin_x, 0, w - 1);
                        out(c, y, x) = static_cast<T>(raster(c, sy, sx));
                    }
                }
            }
            return out;
        }
        const NoiseStream stream{seed, stream_id(0, StreamPurpose::procedural_map)};
        auto lattice = [&](std::int64_t cx, std::int64_t cy, int c) { return 2.0 * uniform_at(stream, cx, cy, c) - 1.0; };
        for (int c = 0; c < channels(); ++c) {
            for (std::int64_t y = 0; y < r.height; ++y) {
                const std::int64_t gy = r.y0 + y;
                const std::int64_t cy = floor_div(gy, cell);
                const double fy = static_cast<double>(floor_mod(gy, cell)) / static_cast<double>(cell);
                for (std::int64_t x = 0; x < r.width; ++x) {
                    const std::int64_t gx = r.x0 + x;
                    const std::int64_t cx = floor_div(gx, cell);
                    const double fx = static_cast<double>(floor_mod(gx, cell)) / static_cast<double>(cell);
                    const double top = lattice(cx, cy, c) * (1.0 - fx) + lattice(cx + 1, cy, c) * fx;
                    const double bottom = lattice(cx, cy + 1, c) * (1.0 - fx) + lattice(cx + 1, cy + 1, c) * fx;
                    out(c, y, x) = static_cast<T>(amplitude * (top * (1.0 - fy) + bottom * fy));
                }
            }
        }
        return out;
    }
};

/**
 * Loads a user map from an IGUSRMAP raster or a store file. For a store file the first persisted tensor is used
 * (a sampler's level-0 accumulator is divided by its weights) over the bounding box of its processed windows,
 * keeping absolute coordinates.
 */
inline UserMapSource load_user_map(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw RasterError("cannot open user map " + path.string());
    }
    std::array<char, 20> head{};
    in.read(head.data(), static_cast<std::streamsize>(head.size()));
    if (in.gcount() >= 8 && std::equal(igusrmap_magic.begin(), igusrmap_magic.end(), head.begin())) {
        return UserMapSource::from_raster(read_igusrmap(path));
    }
    if (in.gcount() < 20 || !std::equal(store_detail::store_magic.begin(), store_detail::store_magic.end(), head.begin())) {
        throw RasterError("user map " + path.string() + " is neither an IGUSRMAP raster nor a store file");
    }
    std::uint32_t tile_size = 0;
    for (int b = 0; b < 4; ++b) {
        tile_size |= static_cast<std::uint32_t>(static_cast<unsigned char>(head[static_cast<std::size_t>(12 + b)])) << (8 * b);
    }
    StoreOptions options;
    options.tile_size = tile_size;
    std::unique_ptr<TileStore> store;
    try {
        store = TileStore::open(path, options);
    } catch (const std::exception& ex) {
        throw RasterError(std::string("cannot read user map store: ") + ex.what());
    }
    const auto names = store->persisted_names();
    if (names.empty()) {
        throw RasterError("user map store holds no tensors");
    }
    std::string name = names.front();
    for (const auto& n : names) {
        if (n.ends_with(".A0")) {
            name = n;
            break;
        }
    }
    const TensorHandle h = store->attach_persisted(name);
    const auto processed = store->processed_windows(h);
    if (processed.empty()) {
        throw RasterError("user map tensor '" + name + "' holds no data");
    }
    const auto& layout = store->spec(h).layout;
    Region box = window_region(layout, processed.front());
    for (const auto& w : processed) {
        box = box.bounding_union(window_region(layout, w));
    }
    Tensor<float> values = store->peek(h, box);
    if (std::regex_match(name, std::regex(R"(.*\.A[0-9]+)"))) {
        values = divide_by_weight(values);
    }
    return UserMapSource::from_raster(std::move(values), box.x0, box.y0);
}

/// `out[c] = map[c] + levels[c] * noise(stream, x, y, c)` over region `r`; zero levels leave the channel untouched.
template <class T>
Tensor<T> corrupt_user_map(const Tensor<T>& map, const std::vector<double>& levels, const NoiseStream& stream, const Region& r) {
    if (static_cast<int>(levels.size()) != map.channels()) {
        throw PipelineConfigError("corruption needs one level per channel (" + std::to_string(map.channels()) + "), got " + std::to_string(levels.size()));
    }
    if (map.height() != r.height || map.width() != r.width) {
        throw ShapeError("map shape " + map.shape_str() + " does not match region " + r.str());
    }
    for (double l : levels) {
        if (!(l >= 0.0)) {
            throw PipelineConfigError("corruption levels must be >= 0");
        }
    }
    Tensor<T> out = map;
    for (int c = 0; c < map.channels(); ++c) {
        const double level = levels[static_cast<std::size_t>(c)];
        if (level == 0.0) {
            continue;
        }
        for (std::int64_t y = 0; y < r.height; ++y) {
            for (std::int64_t x = 0; x < r.width; ++x) {
                out(c, y, x) = static_cast<T>(static_cast<double>(map(c, y, x)) + level * static_cast<double>(noise_at(stream, r.x0 + x, r.y0 + y, c)));
            }
        }
    }
    return out;
}

struct PipelineStage {
    std::string name;
    int steps = 1;
    int channels = 1;
    std::vector<StepSettings> levels;
    DenoiserSpec denoiser;
    /// Pixels of this stage per pixel of the previous stage (stage 0: per user-map pixel).
    std::int64_t scale = 1;
    ConditioningRecipe recipe = ConditioningRecipe::none;
    /// Extra parent pixels supplied around each window's conditioning footprint.
    std::int64_t margin = 0;
    /// Per-channel noise added to the user map (stage 0 only).
    std::vector<double> corruption;
    std::vector<double> scalars;
};

struct PipelineConfig {
    std::vector<PipelineStage> stages;
    std::optional<UserMapSource> user_map;
    CacheMethod cache_method = CacheMethod::indirect;
    std::optional<std::size_t> cache_limit;
    /// Previous-stage pixels per patch-feature cell.
    std::int64_t feature_patch = 2;
    /// Window side, in feature cells, used to generate patch features.
    std::int64_t feature_window = 8;

    void validate() const {
        if (stages.empty()) {
            throw PipelineConfigError("pipeline needs at least one stage");
        }
        if (feature_patch < 1 || feature_window < 1) {
            throw PipelineConfigError("feature_patch and feature_window must be >= 1");
        }
        for (std::size_t k = 0; k < stages.size(); ++k) {
            const auto& s = stages[k];
            const std::string label = "stage " + std::to_string(k) + " ('" + s.name + "')";
            if (s.scale < 1) {
                throw PipelineConfigError(label + ": scale must be >= 1");
            }
            if (s.margin < 0) {
                throw PipelineConfigError(label + ": margin must be >= 0");
            }
            if (k == 0) {
                if (s.recipe == ConditioningRecipe::patch_features) {
                    throw PipelineConfigError(label + ": the first stage cannot use patch features");
                }
                if (!user_map && s.recipe == ConditioningRecipe::nearest) {
                    throw PipelineConfigError(label + ": nearest conditioning on the first stage needs a user map");
                }
                if (!user_map && !s.corruption.empty()) {
                    throw PipelineConfigError(label + ": corruption levels given but no user map");
                }
                if (!user_map && s.scale != 1) {
                    throw PipelineConfigError(label + ": scale is relative to the user map, which is missing");
                }
                if (user_map && user_map->channels() != s.channels) {
                    throw PipelineConfigError(label + ": user map has " + std::to_string(user_map->channels()) + " channels, stage expects " + std::to_string(s.channels));
                }
                if (!s.corruption.empty() && static_cast<int>(s.corruption.size()) != s.channels) {
                    throw PipelineConfigError(label + ": corruption needs one level per channel");
                }
                for (double l : s.corruption) {
                    if (!(l >= 0.0)) {
                        throw PipelineConfigError(label + ": corruption levels must be >= 0");
                    }
                }
            } else if (!s.corruption.empty()) {
                throw PipelineConfigError(label + ": corruption applies to the first stage only");
            }
        }
        for (std::size_t k = 0; k < stages.size(); ++k) {
            for (std::size_t m = k + 1; m < stages.size(); ++m) {
                if (stage_name(k) == stage_name(m)) {
                    throw PipelineConfigError("duplicate stage name '" + stage_name(k) + "'");
                }
            }
        }
    }

    std::string stage_name(std::size_t k) const {
        return stages[k].name.empty() ? "stage" + std::to_string(k) : stages[k].name;
    }
};

/**
 * @brief A built pipeline: one sampler per stage plus the feature tensors linking them.
 */
template <class T>
class BasicPipeline {
public:
    BasicPipeline(BasicTileStore<T>& store, PipelineConfig config, Seed seed) : store_(&store), config_(std::move(config)), seed_(seed) {
        config_.validate();
        for (std::size_t k = 0; k < config_.stages.size(); ++k) {
            build_stage(k);
        }
    }

    std::size_t stage_count() const { return samplers_.size(); }
    BasicSampler<T>& stage(std::size_t k) { return samplers_.at(k); }
    const PipelineConfig& config() const { return config_; }

    /// Level-0 accumulator of the finest stage.
    TensorHandle finest() const { return samplers_.back().accumulator(0); }

    /// Feature tensor derived from stage `k`, if a later stage uses one.
    std::optional<TensorHandle> features(std::size_t k) const { return features_.at(k); }

    /// Output of the finest stage over `r`.
    Tensor<T> read(const Region& r) { return samplers_.back().query(0, r); }

    Tensor<T> read_stage(std::size_t k, const Region& r) { return samplers_.at(k).query(0, r); }

    std::uint64_t total_phi_calls() const {
        std::uint64_t total = 0;
        for (const auto& s : samplers_) {
            total += s.total_phi_calls();
        }
        return total;
    }

private:
    void build_stage(std::size_t k) {
        const PipelineStage& stage = config_.stages[k];
        SamplerConfig<T> sc;
        sc.name = config_.stage_name(k);
        sc.steps = stage.steps;
        sc.levels = stage.levels;
        sc.denoiser = stage.denoiser;
        sc.channels = stage.channels;
        sc.seed = seed_;
        sc.stream = stream_id(static_cast<std::uint32_t>(k), StreamPurpose::base_noise);
        sc.fill_stream = stream_id(static_cast<std::uint32_t>(k), StreamPurpose::climate_fill);
        sc.cache_method = config_.cache_method;
        sc.cache_limit = config_.cache_limit;

        if (k == 0) {
            if (config_.user_map) {
                auto map = std::make_shared<const UserMapSource>(*config_.user_map);
                const std::int64_t scale = stage.scale;
                const std::vector<double> levels = stage.corruption.empty() ? std::vector<double>(static_cast<std::size_t>(stage.channels), 0.0) : stage.corruption;
                const Seed seed = seed_;
                sc.base_field = [map, scale, levels, seed](const Region& r) {
                    const Region footprint = conditioning_footprint(r, scale);
                    const Tensor<T> coarse = map->template sample<T>(footprint, seed);
                    Tensor<T> fine(coarse.channels(), r.height, r.width);
                    for (int c = 0; c < coarse.channels(); ++c) {
                        for (std::int64_t y = 0; y < r.height; ++y) {
                            for (std::int64_t x = 0; x < r.width; ++x) {
                                fine(c, y, x) = coarse(c, floor_div(r.y0 + y, scale) - footprint.y0, floor_div(r.x0 + x, scale) - footprint.x0);
                            }
                        }
                    }
                    return corrupt_user_map(fine, levels, NoiseStream{seed, stream_id(0, StreamPurpose::corruption)}, r);
                };
                if (stage.recipe == ConditioningRecipe::nearest) {
                    ConditioningSource<T> src;
                    src.field = [map, seed](const Region& r) { return map->template sample<T>(r, seed); };
                    src.scale = stage.scale;
                    src.margin = stage.margin;
                    src.scalars = stage.scalars;
                    sc.conditioning = std::move(src);
                }
            }
            if (!sc.conditioning && !stage.scalars.empty()) {
                ConditioningSource<T> src;
                src.field = [](const Region& r) { return Tensor<T>(0, r.height, r.width); };
                src.scalars = stage.scalars;
                sc.conditioning = std::move(src);
            }
        } else {
            const BasicSampler<T>& parent = samplers_[k - 1];
            if (stage.recipe == ConditioningRecipe::nearest) {
                ConditioningSource<T> src;
                src.tensor = parent.accumulator(0);
                src.accumulator = true;
                src.scale = stage.scale;
                src.margin = stage.margin;
                src.scalars = stage.scalars;
                sc.conditioning = std::move(src);
            } else if (stage.recipe == ConditioningRecipe::patch_features) {
                ConditioningSource<T> src;
                src.tensor = build_features(k - 1);
                src.scale = stage.scale * config_.feature_patch;
                src.margin = stage.margin;
                src.mask_channel = 2;
                src.scalars = stage.scalars;
                sc.conditioning = std::move(src);
            } else if (!stage.scalars.empty()) {
                ConditioningSource<T> src;
                src.field = [](const Region& r) { return Tensor<T>(0, r.height, r.width); };
                src.scalars = stage.scalars;
                sc.conditioning = std::move(src);
            }
        }
        samplers_.emplace_back(*store_, std::move(sc));
        features_.emplace_back(std::nullopt);
    }

    TensorHandle build_features(std::size_t parent_stage) {
        const std::string name = config_.stage_name(parent_stage) + ".features";
        if (auto existing = store_->find(name)) {
            features_[parent_stage] = *existing;
            return *existing;
        }
        const std::int64_t patch = config_.feature_patch;
        TensorSpec spec;
        spec.name = name;
        spec.channels = 3;
        spec.layout = WindowLayout(config_.feature_window, config_.feature_window);
        spec.cache_method = config_.cache_method;
        if (config_.cache_method == CacheMethod::direct) {
            spec.cache_limit = config_.cache_limit;
        }
        spec.dependencies.push_back(Dependency{samplers_[parent_stage].accumulator(0), 0, 1, patch});
        Generator<T> gen = [patch](const WindowIndex&, std::span<const Tensor<T>> parents) {
            return coarse_patch_features(divide_by_weight(parents[0]), patch);
        };
        const TensorHandle h = store_->create_tensor(std::move(spec), std::move(gen));
        features_[parent_stage] = h;
        return h;
    }

    BasicTileStore<T>* store_;
    PipelineConfig config_;
    Seed seed_;
    std::vector<BasicSampler<T>> samplers_;
    std::vector<std::optional<TensorHandle>> features_;
};

using Pipeline = BasicPipeline<float>;

template <class T>
BasicPipeline<T> build_pipeline(BasicTileStore<T>& store, PipelineConfig config, Seed seed) {
    return BasicPipeline<T>(store, std::move(config), seed);
}

} // namespace infdiff

#endif
