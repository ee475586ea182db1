#ifndef INFDIFF_RNG_HPP
#define INFDIFF_RNG_HPP

#include <cmath>
#include <cstdint>
#include <numbers>

#include "grid.hpp"
#include "tensor.hpp"

/**
 * @file rng.hpp
 * @brief Stateless, coordinate-addressable Gaussian noise.
 *
 * Every deviate is a pure function of `(seed, stream, x, y, channel)`, so any two queries agree on their
 * overlap regardless of the order in which they are issued.
 */

namespace infdiff {

struct Seed {
    std::uint64_t value = 0;
    friend bool operator==(const Seed&, const Seed&) = default;
};

/// Identifies one independent noise field for a seed.
struct NoiseStream {
    Seed seed;
    std::uint32_t stream = 0;
    friend bool operator==(const NoiseStream&, const NoiseStream&) = default;
};

/// Purposes multiplexed into the low byte of a stream id; the upper bits hold the pipeline stage.
enum class StreamPurpose : std::uint32_t {
    base_noise = 0,
    climate_fill = 1,
    corruption = 2,
    procedural_map = 3,
};

constexpr std::uint32_t stream_id(std::uint32_t stage, StreamPurpose purpose) {
    return (stage << 8) | static_cast<std::uint32_t>(purpose);
}

namespace detail {

inline constexpr std::uint64_t golden_gamma = 0x9E3779B97F4A7C15ULL;

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

constexpr std::uint64_t hash_coordinates(const NoiseStream& stream, std::int64_t x, std::int64_t y, std::int64_t channel) {
    std::uint64_t h = mix64(stream.seed.value + golden_gamma);
    h = mix64(h ^ (static_cast<std::uint64_t>(stream.stream) + 2 * golden_gamma));
    h = mix64(h ^ (static_cast<std::uint64_t>(x) + 3 * golden_gamma));
    h = mix64(h ^ (static_cast<std::uint64_t>(y) + 4 * golden_gamma));
    h = mix64(h ^ (static_cast<std::uint64_t>(channel) + 5 * golden_gamma));
    return h;
}

} // namespace detail

/// Uniform deviate in `(0, 1)` drawn from the upper hash bits; zero is remapped to `2^-32`.
inline double uniform_at(const NoiseStream& stream, std::int64_t x, std::int64_t y, std::int64_t channel) {
    const std::uint64_t h = detail::hash_coordinates(stream, x, y, channel);
    const std::uint32_t hi = static_cast<std::uint32_t>(h >> 32);
    return (hi == 0 ? 1.0 : static_cast<double>(hi)) * 0x1p-32;
}

/**
 * @brief Standard-normal deviate at one lattice coordinate.
 *
 * The 64-bit hash splits into two 32-bit uniforms which feed the Box–Muller transform.
 * Intermediate math is done in double and the result rounded to float.
 */
inline float noise_at(const NoiseStream& stream, std::int64_t x, std::int64_t y, std::int64_t channel) {
    const std::uint64_t h = detail::hash_coordinates(stream, x, y, channel);
    const std::uint32_t hi = static_cast<std::uint32_t>(h >> 32);
    const std::uint32_t lo = static_cast<std::uint32_t>(h);
    const double u1 = (hi == 0 ? 1.0 : static_cast<double>(hi)) * 0x1p-32;
    const double u2 = static_cast<double>(lo) * 0x1p-32;
    const double radius = std::sqrt(-2.0 * std::log(u1));
    return static_cast<float>(radius * std::cos(2.0 * std::numbers::pi * u2));
}

/// Noise over a region, entry `(c, py, px)` equal to `noise_at(stream, r.x0 + px, r.y0 + py, c)`.
template <class T = float>
Tensor<T> noise_region(const NoiseStream& stream, const Region& r, int channels) {
    Tensor<T> out(channels, r.height, r.width);
    for (int c = 0; c < channels; ++c) {
        for (std::int64_t y = 0; y < r.height; ++y) {
            for (std::int64_t x = 0; x < r.width; ++x) {
                out(c, y, x) = static_cast<T>(noise_at(stream, r.x0 + x, r.y0 + y, c));
            }
        }
    }
    return out;
}

} // namespace infdiff

#endif
