#ifndef INFDIFF_TRANSFORMS_HPP
#define INFDIFF_TRANSFORMS_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "denoiser.hpp"
#include "tensor.hpp"

/**
 * @file transforms.hpp
 * @brief Elevation encodings: signed square root, Laplacian split and merge, 8-bit normalization.
 */

namespace infdiff {

/// `sign(x) * sqrt(|x|)`.
inline float signed_sqrt(float x) {
    const double d = static_cast<double>(x);
    return static_cast<float>(std::copysign(std::sqrt(std::fabs(d)), d));
}

/// `sign(x) * x^2`, the inverse of `signed_sqrt`.
inline float signed_square(float x) {
    const double d = static_cast<double>(x);
    return static_cast<float>(std::copysign(d * d, d));
}

template <class T>
Tensor<T> signed_sqrt(const Tensor<T>& x) {
    Tensor<T> out = x;
    for (auto& v : out.values()) {
        const double d = static_cast<double>(v);
        v = static_cast<T>(std::copysign(std::sqrt(std::fabs(d)), d));
    }
    return out;
}

template <class T>
Tensor<T> signed_square(const Tensor<T>& x) {
    Tensor<T> out = x;
    for (auto& v : out.values()) {
        const double d = static_cast<double>(v);
        v = static_cast<T>(std::copysign(d * d, d));
    }
    return out;
}

/// Mean over `factor x factor` blocks.
template <class T>
Tensor<T> block_downsample(const Tensor<T>& x, std::int64_t factor) {
    if (factor < 1) {
        throw std::invalid_argument("downsample factor must be positive");
    }
    if (x.height() % factor != 0 || x.width() % factor != 0) {
        throw ShapeError("tensor " + x.shape_str() + " is not divisible by factor " + std::to_string(factor));
    }
    const std::int64_t oh = x.height() / factor;
    const std::int64_t ow = x.width() / factor;
    const double n = static_cast<double>(factor * factor);
    Tensor<T> out(x.channels(), oh, ow);
    for (int c = 0; c < x.channels(); ++c) {
        for (std::int64_t by = 0; by < oh; ++by) {
            for (std::int64_t bx = 0; bx < ow; ++bx) {
                double sum = 0.0;
                for (std::int64_t y = 0; y < factor; ++y) {
                    for (std::int64_t px = 0; px < factor; ++px) {
                        sum += static_cast<double>(x(c, by * factor + y, bx * factor + px));
                    }
                }
                out(c, by, bx) = static_cast<T>(sum / n);
            }
        }
    }
    return out;
}

/// Nearest-neighbour replication by `factor` on both axes.
template <class T>
Tensor<T> nearest_upsample(const Tensor<T>& x, std::int64_t factor) {
    if (factor < 1) {
        throw std::invalid_argument("upsample factor must be positive");
    }
    Tensor<T> out(x.channels(), x.height() * factor, x.width() * factor);
    for (int c = 0; c < x.channels(); ++c) {
        for (std::int64_t y = 0; y < out.height(); ++y) {
            for (std::int64_t px = 0; px < out.width(); ++px) {
                out(c, y, px) = x(c, y / factor, px / factor);
            }
        }
    }
    return out;
}

/// `iterations` passes of a 3x3 box filter with clamp-to-edge sampling.
template <class T>
Tensor<T> iterated_box_blur(const Tensor<T>& x, int iterations) {
    if (iterations < 0) {
        throw std::invalid_argument("blur radius must be >= 0");
    }
    Tensor<T> out = x;
    for (int k = 0; k < iterations; ++k) {
        out = box_blur(out, 1);
    }
    return out;
}

/**
 * @brief Low-frequency image plus full-resolution residual.
 *
 * The residual is kept in double: `x - upsample(low)` of two floats is exact in double whenever their exponents
 * differ by at most 29, which makes `decode(encode(x)) == x` bit-exact in practice.
 */
struct LaplacianPair {
    Tensor<float> low;
    Tensor<double> high;
    std::int64_t factor = 1;
};

inline Tensor<float> laplacian_decode(const Tensor<float>& low, const Tensor<double>& high, std::int64_t factor) {
    const Tensor<float> up = nearest_upsample(low, factor);
    if (up.channels() != high.channels() || up.height() != high.height() || up.width() != high.width()) {
        throw ShapeError("low-frequency shape " + low.shape_str() + " does not match residual " + high.shape_str() + " at factor " + std::to_string(factor));
    }
    Tensor<float> out(up.channels(), up.height(), up.width());
    for (std::size_t k = 0; k < out.size(); ++k) {
        out.values()[k] = static_cast<float>(static_cast<double>(up.values()[k]) + high.values()[k]);
    }
    return out;
}

inline Tensor<float> laplacian_decode(const LaplacianPair& pair) {
    return laplacian_decode(pair.low, pair.high, pair.factor);
}

/// `L = downsample(blur(x))`, `H = x - upsample(L)`.
inline LaplacianPair laplacian_encode(const Tensor<float>& x, std::int64_t factor, int blur_radius) {
    LaplacianPair pair;
    pair.factor = factor;
    pair.low = block_downsample(iterated_box_blur(x, blur_radius), factor);
    const Tensor<float> up = nearest_upsample(pair.low, factor);
    pair.high = Tensor<double>(x.channels(), x.height(), x.width());
    for (std::size_t k = 0; k < x.size(); ++k) {
        pair.high.values()[k] = static_cast<double>(x.values()[k]) - static_cast<double>(up.values()[k]);
    }
    return pair;
}

/// Re-extracts the low frequencies from the provisional decode; the residual is passed through unchanged.
inline LaplacianPair laplacian_stabilize(const LaplacianPair& pair, std::int64_t factor, int blur_radius) {
    if (factor != pair.factor) {
        throw std::invalid_argument("stabilize factor does not match the pair");
    }
    LaplacianPair out;
    out.factor = factor;
    out.low = block_downsample(iterated_box_blur(laplacian_decode(pair), blur_radius), factor);
    out.high = pair.high;
    return out;
}

/**
 * @brief Maps one heightmap to three identical 8-bit channels.
 *
 * `mid = (min + max) / 2`, `range = max(max - min, 255)`, `v = clamp(((x - mid) / range + 0.5) * 255, 0, 255)`,
 * rounded half to even. Only channel 0 of the input is used.
 */
inline Tensor<std::uint8_t> normalize_heightmap_u8(const Tensor<float>& image) {
    if (image.channels() < 1 || image.size() == 0) {
        throw ShapeError("normalization needs a non-empty single-channel image");
    }
    const auto plane = image.channel(0);
    const auto [lo, hi] = std::minmax_element(plane.begin(), plane.end());
    const double min = static_cast<double>(*lo);
    const double max = static_cast<double>(*hi);
    const double mid = (min + max) / 2.0;
    const double range = std::max(max - min, 255.0);
    Tensor<std::uint8_t> out(3, image.height(), image.width());
    for (std::int64_t y = 0; y < image.height(); ++y) {
        for (std::int64_t x = 0; x < image.width(); ++x) {
            const double v = std::clamp(((static_cast<double>(image(0, y, x)) - mid) / range + 0.5) * 255.0, 0.0, 255.0);
            const auto q = static_cast<std::uint8_t>(std::nearbyint(v));
            for (int c = 0; c < 3; ++c) {
                out(c, y, x) = q;
            }
        }
    }
    return out;
}

inline std::vector<Tensor<std::uint8_t>> normalize_heightmap_u8(const std::vector<Tensor<float>>& batch) {
    std::vector<Tensor<std::uint8_t>> out;
    out.reserve(batch.size());
    for (const auto& image : batch) {
        out.push_back(normalize_heightmap_u8(image));
    }
    return out;
}

} // namespace infdiff

#endif
