#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <limits>
#include <memory>
#include <optional>
#include <regex>
#include <string>

#include "CLI11.hpp"

#include "infdiff/infdiff.hpp"

using namespace infdiff;

namespace {

enum ExitCode : int { exit_ok = 0, exit_verify_failed = 1, exit_config = 2, exit_generation = 3 };

/// Region syntax `x0,y0,WxH`.
Region parse_region(const std::string& text) {
    static const std::regex pattern(R"(^\s*(-?\d+)\s*,\s*(-?\d+)\s*,\s*(\d+)x(\d+)\s*$)");
    std::smatch m;
    if (!std::regex_match(text, m, pattern)) {
        throw ConfigError("region '" + text + "' does not match x0,y0,WxH");
    }
    const auto w = std::stoll(m[3]);
    const auto h = std::stoll(m[4]);
    if (w < 1 || h < 1) {
        throw ConfigError("region '" + text + "' must have positive width and height");
    }
    return Region(std::stoll(m[1]), std::stoll(m[2]), w, h);
}

/// Size syntax `WxH`.
std::pair<std::int64_t, std::int64_t> parse_size(const std::string& text) {
    static const std::regex pattern(R"(^\s*(\d+)x(\d+)\s*$)");
    std::smatch m;
    if (!std::regex_match(text, m, pattern)) {
        throw ConfigError("size '" + text + "' does not match WxH");
    }
    const auto w = std::stoll(m[1]);
    const auto h = std::stoll(m[2]);
    if (w < 1 || h < 1) {
        throw ConfigError("size '" + text + "' must be positive");
    }
    return {w, h};
}

unsigned resolve_threads(std::optional<unsigned> flag, const RunConfig& cfg) {
    if (flag) {
        return std::max(1u, *flag);
    }
    return cfg.threads.value_or(default_thread_count());
}

int cmd_gen(const std::string& config_path, const std::string& region_text, const std::string& output, std::optional<unsigned> threads) {
    RunConfig cfg;
    PipelineConfig pipeline;
    Region region;
    try {
        cfg = load_config(config_path);
        region = parse_region(region_text);
        pipeline = to_pipeline_config(cfg, std::filesystem::path(config_path).parent_path());
    } catch (const std::exception& ex) {
        std::cerr << "config error: " << ex.what() << "\n";
        return exit_config;
    }
    try {
        const StoreOptions options = to_store_options(cfg, resolve_threads(threads, cfg));
        std::unique_ptr<TileStore> store;
        if (options.path && std::filesystem::exists(*options.path)) {
            store = TileStore::open(*options.path, options);
        } else {
            store = std::make_unique<TileStore>(options);
        }
        Pipeline p(*store, pipeline, Seed{cfg.seed});
        const Tensor<float> out = p.read(region);
        write_igusrmap(output, out);
        if (options.path) {
            store->flush();
        }
        double lo = std::numeric_limits<double>::infinity();
        double hi = -std::numeric_limits<double>::infinity();
        double sum = 0.0;
        for (float v : out.values()) {
            lo = std::min(lo, static_cast<double>(v));
            hi = std::max(hi, static_cast<double>(v));
            sum += static_cast<double>(v);
        }
        std::printf("region=%s channels=%d min=%.6g max=%.6g mean=%.6g\n", region.str().c_str(), out.channels(), lo, hi, sum / static_cast<double>(out.size()));
    } catch (const std::exception& ex) {
        std::cerr << "generation error: " << ex.what() << "\n";
        return exit_generation;
    }
    return exit_ok;
}

int cmd_render(const std::string& input, const std::string& output, bool signed_sq, bool shade) {
    Tensor<float> raster;
    try {
        raster = read_igusrmap(input);
    } catch (const std::exception& ex) {
        std::cerr << "cannot read raster: " << ex.what() << "\n";
        return exit_generation;
    }
    try {
        write_pgm(output, render_raster(raster, RenderOptions{signed_sq, shade}));
    } catch (const std::exception& ex) {
        std::cerr << "render error: " << ex.what() << "\n";
        return exit_generation;
    }
    return exit_ok;
}

int cmd_bench(const std::string& config_path, const std::string& size_text, std::size_t trials, std::optional<unsigned> threads) {
    RunConfig cfg;
    PipelineConfig pipeline;
    std::pair<std::int64_t, std::int64_t> size;
    try {
        cfg = load_config(config_path);
        size = parse_size(size_text);
        pipeline = to_pipeline_config(cfg, std::filesystem::path(config_path).parent_path());
        if (trials < 1) {
            throw ConfigError("trials must be >= 1");
        }
    } catch (const std::exception& ex) {
        std::cerr << "config error: " << ex.what() << "\n";
        return exit_config;
    }
    try {
        std::cout << format_bench(run_bench(cfg, pipeline, size.first, size.second, trials, resolve_threads(threads, cfg)));
    } catch (const std::exception& ex) {
        std::cerr << "generation error: " << ex.what() << "\n";
        return exit_generation;
    }
    return exit_ok;
}

int cmd_verify(const std::string& config_path, const std::string& mode) {
    RunConfig cfg;
    try {
        cfg = load_config(config_path);
        if (mode != "oracle" && mode != "order" && mode != "cost" && mode != "transforms") {
            throw ConfigError("unknown verify mode '" + mode + "' (expected oracle, order, cost or transforms)");
        }
    } catch (const std::exception& ex) {
        std::cerr << "config error: " << ex.what() << "\n";
        return exit_config;
    }
    try {
        bool ok = true;
        for (const auto& check : run_verify(cfg, mode)) {
            std::cout << check.line() << "\n";
            ok = ok && check.passed;
        }
        return ok ? exit_ok : exit_verify_failed;
    } catch (const std::exception& ex) {
        std::cerr << "generation error: " << ex.what() << "\n";
        return exit_generation;
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Seed-consistent lazy sliding-window diffusion over unbounded 2-D lattices."};
    app.require_subcommand(1);
    std::optional<unsigned> threads;
    app.add_option("--threads", threads, "Worker thread cap (default: available parallelism)")->check(CLI::PositiveNumber);

    std::string config_path;
    std::string region;
    std::string output;
    auto* gen = app.add_subcommand("gen", "Generate a region and write it as an IGUSRMAP raster");
    gen->add_option("config", config_path, "Run configuration (JSON)")->required();
    gen->add_option("region", region, "Region as x0,y0,WxH; x0 and y0 may be negative")->required();
    gen->add_option("output", output, "Output raster path")->required();

    std::string input;
    bool signed_sq = false;
    bool shade = false;
    auto* render = app.add_subcommand("render", "Render an IGUSRMAP raster as an 8-bit PGM image");
    render->add_option("raster", input, "Input raster")->required();
    render->add_option("output", output, "Output PGM path")->required();
    render->add_flag("--signed-square", signed_sq, "Apply sign(x) x^2 before rendering");
    render->add_flag("--hillshade", shade, "Horn hillshade, azimuth 315, altitude 45");

    std::string size = "256x256";
    std::size_t trials = 10;
    auto* bench = app.add_subcommand("bench", "Time to first and second tile over random locations");
    bench->add_option("config", config_path, "Run configuration (JSON)")->required();
    bench->add_option("--size", size, "Region size WxH")->capture_default_str();
    bench->add_option("--trials", trials, "Number of random locations")->capture_default_str();

    std::string mode;
    auto* verify = app.add_subcommand("verify", "Run a property suite: oracle, order, cost or transforms");
    verify->add_option("config", config_path, "Run configuration (JSON)")->required();
    verify->add_option("mode", mode, "oracle | order | cost | transforms")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? exit_ok : exit_config;
    }

    if (gen->parsed()) {
        return cmd_gen(config_path, region, output, threads);
    }
    if (render->parsed()) {
        return cmd_render(input, output, signed_sq, shade);
    }
    if (bench->parsed()) {
        return cmd_bench(config_path, size, trials, threads);
    }
    return cmd_verify(config_path, mode);
}
