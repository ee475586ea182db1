#ifndef INFDIFF_RASTER_HPP
#define INFDIFF_RASTER_HPP

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "tensor.hpp"
#include "transforms.hpp"

/**
 * @file raster.hpp
 * @brief Binary raster files, PGM output and hillshading.
 *
 * IGUSRMAP layout, little-endian: 8-byte magic "IGUSRMAP", u32 width, u32 height, u32 channels, then
 * `channels` planes of `height x width` float32 values in row-major order.
 */

namespace infdiff {

class RasterError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr std::array<char, 8> igusrmap_magic{'I', 'G', 'U', 'S', 'R', 'M', 'A', 'P'};

namespace raster_detail {

inline void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
    for (int b = 0; b < 4; ++b) {
        out.push_back(static_cast<unsigned char>(v >> (8 * b)));
    }
}

inline std::uint32_t get_u32(const std::vector<unsigned char>& in, std::size_t pos) {
    std::uint32_t v = 0;
    for (int b = 0; b < 4; ++b) {
        v |= static_cast<std::uint32_t>(in[pos + static_cast<std::size_t>(b)]) << (8 * b);
    }
    return v;
}

inline std::vector<unsigned char> read_all(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw RasterError("cannot open " + path.string());
    }
    return std::vector<unsigned char>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

inline void write_all(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw RasterError("cannot write " + path.string());
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw RasterError("failed writing " + path.string());
    }
}

} // namespace raster_detail

inline std::vector<unsigned char> encode_igusrmap(const Tensor<float>& data) {
    std::vector<unsigned char> out(igusrmap_magic.begin(), igusrmap_magic.end());
    raster_detail::put_u32(out, static_cast<std::uint32_t>(data.width()));
    raster_detail::put_u32(out, static_cast<std::uint32_t>(data.height()));
    raster_detail::put_u32(out, static_cast<std::uint32_t>(data.channels()));
    out.reserve(out.size() + data.size() * 4);
    for (float v : data.values()) {
        raster_detail::put_u32(out, std::bit_cast<std::uint32_t>(v));
    }
    return out;
}

inline Tensor<float> decode_igusrmap(const std::vector<unsigned char>& bytes) {
    if (bytes.size() < 20 || !std::equal(igusrmap_magic.begin(), igusrmap_magic.end(), bytes.begin())) {
        throw RasterError("not an IGUSRMAP raster");
    }
    const std::uint32_t width = raster_detail::get_u32(bytes, 8);
    const std::uint32_t height = raster_detail::get_u32(bytes, 12);
    const std::uint32_t channels = raster_detail::get_u32(bytes, 16);
    if (width == 0 || height == 0 || channels == 0) {
        throw RasterError("IGUSRMAP raster has an empty dimension");
    }
    const std::uint64_t count = static_cast<std::uint64_t>(width) * height * channels;
    if ((bytes.size() - 20) / 4 != count || (bytes.size() - 20) % 4 != 0) {
        throw RasterError("IGUSRMAP payload size does not match its header");
    }
    Tensor<float> out(static_cast<int>(channels), height, width);
    for (std::size_t k = 0; k < out.size(); ++k) {
        out.values()[k] = std::bit_cast<float>(raster_detail::get_u32(bytes, 20 + 4 * k));
    }
    return out;
}

inline void write_igusrmap(const std::filesystem::path& path, const Tensor<float>& data) {
    raster_detail::write_all(path, encode_igusrmap(data));
}

inline Tensor<float> read_igusrmap(const std::filesystem::path& path) {
    return decode_igusrmap(raster_detail::read_all(path));
}

/// Binary greyscale PGM ("P5") of channel 0.
inline std::vector<unsigned char> encode_pgm(const Tensor<std::uint8_t>& image) {
    const std::string header = "P5\n" + std::to_string(image.width()) + " " + std::to_string(image.height()) + "\n255\n";
    std::vector<unsigned char> out(header.begin(), header.end());
    const auto plane = image.channel(0);
    out.insert(out.end(), plane.begin(), plane.end());
    return out;
}

inline void write_pgm(const std::filesystem::path& path, const Tensor<std::uint8_t>& image) {
    raster_detail::write_all(path, encode_pgm(image));
}

/**
 * @brief Horn hillshade of channel 0 with azimuth 315 degrees and altitude 45 degrees.
 *
 * Gradients use the 3x3 Horn kernel with clamp-to-edge sampling and unit cell size. Shade is
 * `255 * (cos(zenith) cos(slope) + sin(zenith) sin(slope) cos(azimuth - aspect))`, clamped to [0, 255]
 * and rounded half to even.
 */
inline Tensor<std::uint8_t> hillshade(const Tensor<float>& elevation, double cell_size = 1.0) {
    const std::int64_t h = elevation.height();
    const std::int64_t w = elevation.width();
    const double zenith = (90.0 - 45.0) * std::numbers::pi / 180.0;
    const double azimuth = (360.0 - 315.0 + 90.0) * std::numbers::pi / 180.0;
    auto z = [&](std::int64_t y, std::int64_t x) {
        return static_cast<double>(elevation(0, std::clamp<std::int64_t>(y, 0, h - 1), std::clamp<std::int64_t>(x, 0, w - 1)));
    };
    Tensor<std::uint8_t> out(1, h, w);
    for (std::int64_t y = 0; y < h; ++y) {
        for (std::int64_t x = 0; x < w; ++x) {
            const double a = z(y - 1, x - 1), b = z(y - 1, x), c = z(y - 1, x + 1);
            const double d = z(y, x - 1), f = z(y, x + 1);
            const double g = z(y + 1, x - 1), hh = z(y + 1, x), i = z(y + 1, x + 1);
            const double dzdx = ((c + 2 * f + i) - (a + 2 * d + g)) / (8.0 * cell_size);
            const double dzdy = ((g + 2 * hh + i) - (a + 2 * b + c)) / (8.0 * cell_size);
            const double slope = std::atan(std::hypot(dzdx, dzdy));
            const double aspect = std::atan2(dzdy, -dzdx);
            const double shade = 255.0 * (std::cos(zenith) * std::cos(slope) + std::sin(zenith) * std::sin(slope) * std::cos(azimuth - aspect));
            out(0, y, x) = static_cast<std::uint8_t>(std::nearbyint(std::clamp(shade, 0.0, 255.0)));
        }
    }
    return out;
}

struct RenderOptions {
    bool signed_square = false;
    bool hillshade = false;
};

/// 8-bit image of a raster: optional inverse signed square root, then normalization or hillshade.
inline Tensor<std::uint8_t> render_raster(const Tensor<float>& raster, const RenderOptions& options) {
    Tensor<float> values = options.signed_square ? signed_square(raster) : raster;
    if (options.hillshade) {
        return hillshade(values);
    }
    return normalize_heightmap_u8(values);
}

} // namespace infdiff

#endif
