#ifndef INFDIFF_CONFIG_HPP
#define INFDIFF_CONFIG_HPP

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "denoiser.hpp"
#include "grid.hpp"
#include "pipeline.hpp"
#include "sampler.hpp"
#include "tensorstore.hpp"

/**
 * @file config.hpp
 * @brief JSON run configuration: parsing with strict key checking, serialization, and conversion to a pipeline.
 */

namespace infdiff {

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct WeightSpec {
    std::string type = "linear";
    double epsilon = default_weight_epsilon;

    WeightMap build(std::int64_t window) const {
        if (type == "linear") {
            return linear_weight_window(window, epsilon);
        }
        if (type == "constant") {
            return constant_weight_window(window);
        }
        throw ConfigError("unknown weight type '" + type + "'");
    }

    friend bool operator==(const WeightSpec&, const WeightSpec&) = default;
};

struct StageSpec {
    std::string name;
    int steps = 1;
    int channels = 1;
    std::int64_t scale = 1;
    std::vector<WindowLayout> layouts{WindowLayout(16, 8)};
    WeightSpec weights;
    DenoiserSpec denoiser;
    ConditioningRecipe recipe = ConditioningRecipe::none;
    std::int64_t margin = 0;
    std::vector<double> corruption;
    std::vector<double> scalars;
};

struct UserMapSpec {
    std::string type = "procedural";
    std::string path;
    int channels = 1;
    std::int64_t cell = 16;
    double amplitude = 1.0;
};

struct StoreSettings {
    CacheMethod cache = CacheMethod::indirect;
    std::int64_t tile_size = 256;
    std::optional<std::size_t> cache_limit_bytes;
    std::optional<std::string> path;
};

struct RunConfig {
    std::uint64_t seed = 0;
    std::optional<unsigned> threads;
    StoreSettings store;
    std::optional<UserMapSpec> user_map;
    std::int64_t feature_patch = 2;
    std::int64_t feature_window = 8;
    std::vector<StageSpec> stages;
};

namespace config_detail {

using nlohmann::json;

inline void check_keys(const json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
    if (!obj.is_object()) {
        throw ConfigError(where + ": expected an object");
    }
    const std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [key, value] : obj.items()) {
        if (!ok.contains(key)) {
            throw ConfigError(where + ": unknown key '" + key + "'");
        }
    }
}

template <class U>
U get(const json& obj, const char* key, const std::string& where, U fallback) {
    if (!obj.contains(key) || obj.at(key).is_null()) {
        return fallback;
    }
    try {
        return obj.at(key).get<U>();
    } catch (const json::exception&) {
        throw ConfigError(where + "." + key + ": wrong type");
    }
}

inline WindowLayout parse_layout(const json& j, const std::string& where) {
    check_keys(j, {"window", "stride", "offset"}, where);
    const auto window = get<std::int64_t>(j, "window", where, 16);
    const auto stride = get<std::int64_t>(j, "stride", where, window);
    auto offset = get<std::vector<std::int64_t>>(j, "offset", where, {0, 0});
    if (offset.size() != 2) {
        throw ConfigError(where + ".offset: expected [x, y]");
    }
    try {
        return WindowLayout(window, stride, offset[0], offset[1]);
    } catch (const std::invalid_argument& ex) {
        throw ConfigError(where + ": " + ex.what());
    }
}

inline json layout_json(const WindowLayout& l) {
    return json{{"window", l.window}, {"stride", l.stride}, {"offset", {l.offset_x, l.offset_y}}};
}

inline DenoiserSpec parse_denoiser(const json& j, const std::string& where, bool allow_inner) {
    check_keys(j, {"kind", "lambda", "radius", "blend", "inner_steps", "lambda_start", "lambda_end", "inner"}, where);
    DenoiserSpec d;
    try {
        d.kind = denoiser_kind_from_string(get<std::string>(j, "kind", where, "identity"));
    } catch (const std::invalid_argument& ex) {
        throw ConfigError(where + ": " + ex.what());
    }
    if (j.contains("lambda") && j.at("lambda").is_number()) {
        d.lambda = {j.at("lambda").get<double>()};
    } else {
        d.lambda = get<std::vector<double>>(j, "lambda", where, d.lambda);
    }
    d.radius = get<int>(j, "radius", where, d.radius);
    d.blend = get<double>(j, "blend", where, d.blend);
    d.inner_steps = get<int>(j, "inner_steps", where, d.inner_steps);
    d.lambda_start = get<double>(j, "lambda_start", where, d.lambda_start);
    d.lambda_end = get<double>(j, "lambda_end", where, d.lambda_end);
    if (j.contains("inner") && !j.at("inner").is_null()) {
        if (!allow_inner) {
            throw ConfigError(where + ".inner: nested multistep denoisers are not supported");
        }
        d.inner = std::make_shared<const DenoiserSpec>(parse_denoiser(j.at("inner"), where + ".inner", false));
    }
    return d;
}

inline json denoiser_json(const DenoiserSpec& d) {
    json j{{"kind", to_string(d.kind)}, {"lambda", d.lambda}, {"radius", d.radius}, {"blend", d.blend}, {"inner_steps", d.inner_steps}, {"lambda_start", d.lambda_start}, {"lambda_end", d.lambda_end}};
    if (d.inner) {
        j["inner"] = denoiser_json(*d.inner);
        j["inner"].erase("inner");
    }
    return j;
}

inline StageSpec parse_stage(const json& j, const std::string& where) {
    check_keys(j, {"name", "steps", "channels", "scale", "layout", "layouts", "weights", "denoiser", "conditioning", "corruption", "scalars"}, where);
    StageSpec s;
    s.name = get<std::string>(j, "name", where, "");
    s.steps = get<int>(j, "steps", where, 1);
    s.channels = get<int>(j, "channels", where, 1);
    s.scale = get<std::int64_t>(j, "scale", where, 1);
    if (j.contains("layout") && j.contains("layouts")) {
        throw ConfigError(where + ": give either 'layout' or 'layouts', not both");
    }
    if (j.contains("layout")) {
        s.layouts = {parse_layout(j.at("layout"), where + ".layout")};
    } else if (j.contains("layouts")) {
        if (!j.at("layouts").is_array() || j.at("layouts").empty()) {
            throw ConfigError(where + ".layouts: expected a non-empty array");
        }
        s.layouts.clear();
        for (std::size_t k = 0; k < j.at("layouts").size(); ++k) {
            s.layouts.push_back(parse_layout(j.at("layouts")[k], where + ".layouts[" + std::to_string(k) + "]"));
        }
    }
    if (j.contains("weights")) {
        const auto& w = j.at("weights");
        check_keys(w, {"type", "epsilon"}, where + ".weights");
        s.weights.type = get<std::string>(w, "type", where + ".weights", "linear");
        s.weights.epsilon = get<double>(w, "epsilon", where + ".weights", default_weight_epsilon);
        if (s.weights.type != "linear" && s.weights.type != "constant") {
            throw ConfigError(where + ".weights.type: expected 'linear' or 'constant'");
        }
        if (!(s.weights.epsilon > 0.0) || s.weights.epsilon > 1.0) {
            throw ConfigError(where + ".weights.epsilon: must lie in (0, 1]");
        }
    }
    if (j.contains("denoiser")) {
        s.denoiser = parse_denoiser(j.at("denoiser"), where + ".denoiser", true);
    }
    s.denoiser.channels = s.channels;
    if (j.contains("conditioning")) {
        const auto& c = j.at("conditioning");
        check_keys(c, {"recipe", "margin"}, where + ".conditioning");
        try {
            s.recipe = recipe_from_string(get<std::string>(c, "recipe", where + ".conditioning", "none"));
        } catch (const std::invalid_argument& ex) {
            throw ConfigError(where + ".conditioning: " + ex.what());
        }
        s.margin = get<std::int64_t>(c, "margin", where + ".conditioning", 0);
    }
    s.corruption = get<std::vector<double>>(j, "corruption", where, {});
    s.scalars = get<std::vector<double>>(j, "scalars", where, {});
    if (s.steps < 1) {
        throw ConfigError(where + ".steps: must be >= 1");
    }
    if (s.channels < 1) {
        throw ConfigError(where + ".channels: must be >= 1");
    }
    if (s.layouts.size() != 1 && s.layouts.size() != static_cast<std::size_t>(s.steps)) {
        throw ConfigError(where + ".layouts: need one layout or one per step");
    }
    try {
        s.denoiser.validate();
    } catch (const std::invalid_argument& ex) {
        throw ConfigError(where + ".denoiser: " + ex.what());
    }
    return s;
}

} // namespace config_detail

/// Parses and validates a run configuration. Unknown keys are errors.
inline RunConfig parse_config(const nlohmann::json& j) {
    using namespace config_detail;
    check_keys(j, {"seed", "threads", "store", "user_map", "feature_patch", "feature_window", "stages"}, "config");
    RunConfig cfg;
    cfg.seed = get<std::uint64_t>(j, "seed", "config", 0);
    if (j.contains("threads") && !j.at("threads").is_null()) {
        const auto t = get<std::int64_t>(j, "threads", "config", 1);
        if (t < 1) {
            throw ConfigError("config.threads: must be >= 1");
        }
        cfg.threads = static_cast<unsigned>(t);
    }
    if (j.contains("store")) {
        const auto& s = j.at("store");
        check_keys(s, {"cache", "tile_size", "cache_limit_bytes", "path"}, "config.store");
        const auto cache = get<std::string>(s, "cache", "config.store", "indirect");
        if (cache != "direct" && cache != "indirect") {
            throw ConfigError("config.store.cache: expected 'direct' or 'indirect'");
        }
        cfg.store.cache = cache == "direct" ? CacheMethod::direct : CacheMethod::indirect;
        cfg.store.tile_size = get<std::int64_t>(s, "tile_size", "config.store", 256);
        if (s.contains("cache_limit_bytes") && !s.at("cache_limit_bytes").is_null()) {
            cfg.store.cache_limit_bytes = get<std::size_t>(s, "cache_limit_bytes", "config.store", 0);
        }
        if (s.contains("path") && !s.at("path").is_null()) {
            cfg.store.path = get<std::string>(s, "path", "config.store", "");
        }
    }
    if (j.contains("user_map") && !j.at("user_map").is_null()) {
        const auto& u = j.at("user_map");
        check_keys(u, {"type", "path", "channels", "cell", "amplitude"}, "config.user_map");
        UserMapSpec m;
        m.type = get<std::string>(u, "type", "config.user_map", "procedural");
        m.path = get<std::string>(u, "path", "config.user_map", "");
        m.channels = get<int>(u, "channels", "config.user_map", 1);
        m.cell = get<std::int64_t>(u, "cell", "config.user_map", 16);
        m.amplitude = get<double>(u, "amplitude", "config.user_map", 1.0);
        if (m.type != "procedural" && m.type != "file") {
            throw ConfigError("config.user_map.type: expected 'procedural' or 'file'");
        }
        if (m.type == "file" && m.path.empty()) {
            throw ConfigError("config.user_map.path: required for file user maps");
        }
        if (m.channels < 1 || m.cell < 1) {
            throw ConfigError("config.user_map: channels and cell must be >= 1");
        }
        cfg.user_map = m;
    }
    cfg.feature_patch = get<std::int64_t>(j, "feature_patch", "config", 2);
    cfg.feature_window = get<std::int64_t>(j, "feature_window", "config", 8);
    if (!j.contains("stages") || !j.at("stages").is_array() || j.at("stages").empty()) {
        throw ConfigError("config.stages: expected a non-empty array");
    }
    for (std::size_t k = 0; k < j.at("stages").size(); ++k) {
        cfg.stages.push_back(parse_stage(j.at("stages")[k], "config.stages[" + std::to_string(k) + "]"));
    }
    return cfg;
}

inline RunConfig parse_config_text(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& ex) {
        throw ConfigError(std::string("config is not valid JSON: ") + ex.what());
    }
    return parse_config(j);
}

inline RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot read config file " + path.string());
    }
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse_config_text(buffer.str());
}

inline nlohmann::json to_json(const RunConfig& cfg) {
    using config_detail::json;
    json j;
    j["seed"] = cfg.seed;
    if (cfg.threads) {
        j["threads"] = *cfg.threads;
    }
    j["store"] = json{{"cache", to_string(cfg.store.cache)}, {"tile_size", cfg.store.tile_size}};
    if (cfg.store.cache_limit_bytes) {
        j["store"]["cache_limit_bytes"] = *cfg.store.cache_limit_bytes;
    }
    if (cfg.store.path) {
        j["store"]["path"] = *cfg.store.path;
    }
    if (cfg.user_map) {
        const auto& m = *cfg.user_map;
        j["user_map"] = json{{"type", m.type}, {"channels", m.channels}, {"cell", m.cell}, {"amplitude", m.amplitude}};
        if (!m.path.empty()) {
            j["user_map"]["path"] = m.path;
        }
    }
    j["feature_patch"] = cfg.feature_patch;
    j["feature_window"] = cfg.feature_window;
    j["stages"] = json::array();
    for (const auto& s : cfg.stages) {
        json st{{"name", s.name},
                {"steps", s.steps},
                {"channels", s.channels},
                {"scale", s.scale},
                {"weights", {{"type", s.weights.type}, {"epsilon", s.weights.epsilon}}},
                {"denoiser", config_detail::denoiser_json(s.denoiser)},
                {"conditioning", {{"recipe", to_string(s.recipe)}, {"margin", s.margin}}},
                {"corruption", s.corruption},
                {"scalars", s.scalars}};
        st["layouts"] = json::array();
        for (const auto& l : s.layouts) {
            st["layouts"].push_back(config_detail::layout_json(l));
        }
        j["stages"].push_back(std::move(st));
    }
    return j;
}

/// Builds the pipeline description; relative user-map paths resolve against `base_dir`.
inline PipelineConfig to_pipeline_config(const RunConfig& cfg, const std::filesystem::path& base_dir = {}) {
    PipelineConfig p;
    p.cache_method = cfg.store.cache;
    p.cache_limit = cfg.store.cache_limit_bytes;
    p.feature_patch = cfg.feature_patch;
    p.feature_window = cfg.feature_window;
    if (cfg.user_map) {
        const auto& m = *cfg.user_map;
        if (m.type == "file") {
            std::filesystem::path path(m.path);
            if (path.is_relative() && !base_dir.empty()) {
                path = base_dir / path;
            }
            try {
                p.user_map = load_user_map(path);
            } catch (const std::exception& ex) {
                throw ConfigError(std::string("config.user_map: ") + ex.what());
            }
        } else {
            p.user_map = UserMapSource::procedural(m.channels, m.cell, m.amplitude);
        }
    }
    for (const auto& s : cfg.stages) {
        PipelineStage st;
        st.name = s.name;
        st.steps = s.steps;
        st.channels = s.channels;
        st.scale = s.scale;
        for (const auto& l : s.layouts) {
            st.levels.push_back(StepSettings{l, s.weights.build(l.window)});
        }
        st.denoiser = s.denoiser;
        st.recipe = s.recipe;
        st.margin = s.margin;
        st.corruption = s.corruption;
        st.scalars = s.scalars;
        p.stages.push_back(std::move(st));
    }
    try {
        p.validate();
    } catch (const std::invalid_argument& ex) {
        throw ConfigError(ex.what());
    }
    return p;
}

inline StoreOptions to_store_options(const RunConfig& cfg, unsigned threads) {
    StoreOptions o;
    o.tile_size = cfg.store.tile_size;
    o.threads = threads;
    if (cfg.store.path) {
        o.path = *cfg.store.path;
    }
    return o;
}

} // namespace infdiff

#endif
