#ifndef INFDIFF_DENOISER_HPP
#define INFDIFF_DENOISER_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "grid.hpp"
#include "rng.hpp"
#include "tensor.hpp"

/**
 * @file denoiser.hpp
 * @brief Deterministic reference denoisers and the per-window conditioning map.
 */

namespace infdiff {

enum class DenoiserKind { identity, shrink_smooth, cond_affine, multistep };

inline const char* to_string(DenoiserKind k) {
    switch (k) {
    case DenoiserKind::identity:
        return "identity";
    case DenoiserKind::shrink_smooth:
        return "shrink_smooth";
    case DenoiserKind::cond_affine:
        return "cond_affine";
    case DenoiserKind::multistep:
        return "multistep";
    }
    return "unknown";
}

inline DenoiserKind denoiser_kind_from_string(const std::string& s) {
    if (s == "identity") {
        return DenoiserKind::identity;
    }
    if (s == "shrink_smooth") {
        return DenoiserKind::shrink_smooth;
    }
    if (s == "cond_affine") {
        return DenoiserKind::cond_affine;
    }
    if (s == "multistep") {
        return DenoiserKind::multistep;
    }
    throw std::invalid_argument("unknown denoiser kind '" + s + "'");
}

/**
 * @brief Parameters of a reference denoiser.
 *
 * SHRINK_SMOOTH computes `(1 - lambda_t) x + lambda_t boxblur(x, radius)`. COND_AFFINE then blends that toward the
 * first spatial conditioning channel with weight `blend * mask`. MULTISTEP applies `inner` `inner_steps` times with
 * shrink factors interpolated geometrically from `lambda_start` to `lambda_end`.
 */
struct DenoiserSpec {
    DenoiserKind kind = DenoiserKind::identity;
    /// Shrink factor per outer step `t` (entry `t - 1`); a single entry applies to every step.
    std::vector<double> lambda{0.5};
    int radius = 1;
    double blend = 0.5;
    int inner_steps = 1;
    double lambda_start = 0.5;
    double lambda_end = 0.1;
    std::shared_ptr<const DenoiserSpec> inner;
    int channels = 1;

    double lambda_at(int t) const {
        if (lambda.empty()) {
            throw std::invalid_argument("denoiser lambda schedule is empty");
        }
        if (lambda.size() == 1) {
            return lambda.front();
        }
        if (t < 1 || static_cast<std::size_t>(t) > lambda.size()) {
            throw std::out_of_range("no lambda for outer step " + std::to_string(t));
        }
        return lambda[static_cast<std::size_t>(t - 1)];
    }

    /// Shrink factor of inner iteration `k` of a MULTISTEP denoiser.
    double inner_lambda(int k) const {
        if (inner_steps <= 1) {
            return lambda_start;
        }
        const double frac = static_cast<double>(k) / static_cast<double>(inner_steps - 1);
        return lambda_start * std::pow(lambda_end / lambda_start, frac);
    }

    void validate() const {
        if (channels < 1) {
            throw std::invalid_argument("denoiser needs at least one channel");
        }
        if (radius < 0) {
            throw std::invalid_argument("denoiser blur radius must be >= 0");
        }
        if (lambda.empty()) {
            throw std::invalid_argument("denoiser lambda schedule is empty");
        }
        for (double l : lambda) {
            if (!std::isfinite(l)) {
                throw std::invalid_argument("denoiser lambda must be finite");
            }
        }
        if (!std::isfinite(blend)) {
            throw std::invalid_argument("denoiser blend must be finite");
        }
        if (kind == DenoiserKind::multistep) {
            if (inner_steps < 1) {
                throw std::invalid_argument("multistep denoiser needs inner_steps >= 1");
            }
            if (!(lambda_start > 0.0) || !(lambda_end > 0.0)) {
                throw std::invalid_argument("multistep lambda_start and lambda_end must be positive");
            }
            if (inner && inner->kind == DenoiserKind::multistep) {
                throw std::invalid_argument("multistep denoisers cannot be nested");
            }
        }
    }
};

/// Denoiser input or conditioning with the wrong shape.
class DenoiserError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/**
 * @brief Per-window conditioning `y_i`.
 *
 * `spatial` holds channels cropped from a parent and upsampled to window resolution, `climate` holds the scalar
 * side inputs broadcast over the window. `mask` is one channel of 0/1 availability flags. Where the mask is 0,
 * climate entries and non-finite spatial entries hold Gaussian noise.
 */
template <class T>
struct Conditioning {
    Tensor<T> spatial;
    Tensor<T> mask;
    Tensor<T> climate;
    std::vector<double> scalars;

    bool empty() const { return spatial.empty() && climate.empty(); }
    friend bool operator==(const Conditioning&, const Conditioning&) = default;
};

/**
 * Separable box blur of radius `radius` with clamp-to-edge sampling. Sums are taken in double,
 * so constant inputs stay exactly constant.
 */
template <class T>
Tensor<T> box_blur(const Tensor<T>& x, int radius) {
    if (radius <= 0) {
        return x;
    }
    const std::int64_t h = x.height();
    const std::int64_t w = x.width();
    const double norm = static_cast<double>(2 * radius + 1);
    Tensor<T> tmp(x.channels(), h, w);
    Tensor<T> out(x.channels(), h, w);
    for (int c = 0; c < x.channels(); ++c) {
        for (std::int64_t y = 0; y < h; ++y) {
            for (std::int64_t px = 0; px < w; ++px) {
                double sum = 0.0;
                for (std::int64_t d = -radius; d <= radius; ++d) {
                    sum += static_cast<double>(x(c, y, std::clamp<std::int64_t>(px + d, 0, w - 1)));
                }
                tmp(c, y, px) = static_cast<T>(sum / norm);
            }
        }
        for (std::int64_t y = 0; y < h; ++y) {
            for (std::int64_t px = 0; px < w; ++px) {
                double sum = 0.0;
                for (std::int64_t d = -radius; d <= radius; ++d) {
                    sum += static_cast<double>(tmp(c, std::clamp<std::int64_t>(y + d, 0, h - 1), px));
                }
                out(c, y, px) = static_cast<T>(sum / norm);
            }
        }
    }
    return out;
}

namespace detail {

template <class T>
Tensor<T> shrink_smooth(const Tensor<T>& x, double lambda, int radius) {
    const Tensor<T> blurred = box_blur(x, radius);
    Tensor<T> out(x.channels(), x.height(), x.width());
    auto& o = out.values();
    const auto& a = x.values();
    const auto& b = blurred.values();
    for (std::size_t k = 0; k < o.size(); ++k) {
        o[k] = static_cast<T>((1.0 - lambda) * static_cast<double>(a[k]) + lambda * static_cast<double>(b[k]));
    }
    return out;
}

template <class T>
Tensor<T> cond_affine(const Tensor<T>& smoothed, const Conditioning<T>& y, double blend) {
    if (y.spatial.channels() == 0) {
        return smoothed;
    }
    if (y.spatial.height() != smoothed.height() || y.spatial.width() != smoothed.width()) {
        throw DenoiserError("conditioning shape " + y.spatial.shape_str() + " does not match window " + smoothed.shape_str());
    }
    const bool has_mask = !y.mask.empty();
    Tensor<T> out(smoothed.channels(), smoothed.height(), smoothed.width());
    for (int c = 0; c < smoothed.channels(); ++c) {
        for (std::int64_t py = 0; py < smoothed.height(); ++py) {
            for (std::int64_t px = 0; px < smoothed.width(); ++px) {
                const double m = has_mask ? static_cast<double>(y.mask(0, py, px)) : 1.0;
                const double a = blend * m;
                out(c, py, px) = static_cast<T>((1.0 - a) * static_cast<double>(smoothed(c, py, px)) + a * static_cast<double>(y.spatial(0, py, px)));
            }
        }
    }
    return out;
}

template <class T>
Tensor<T> apply_single(const DenoiserSpec& spec, const Tensor<T>& x, const Conditioning<T>& y, double lambda) {
    switch (spec.kind) {
    case DenoiserKind::identity:
        return x;
    case DenoiserKind::shrink_smooth:
        return shrink_smooth(x, lambda, spec.radius);
    case DenoiserKind::cond_affine:
        return cond_affine(shrink_smooth(x, lambda, spec.radius), y, spec.blend);
    case DenoiserKind::multistep:
        break;
    }
    throw DenoiserError("multistep denoisers cannot be nested");
}

} // namespace detail

/**
 * @brief Applies the denoiser `Phi(x | y)` at outer step `t` (1-based).
 *
 * A pure function of its arguments; internal multi-step schedules are invisible to callers.
 */
template <class T>
Tensor<T> apply(const DenoiserSpec& spec, const Tensor<T>& x, const Conditioning<T>& y, int t) {
    if (x.channels() != spec.channels) {
        throw DenoiserError("denoiser expects " + std::to_string(spec.channels) + " channels, got input of shape " + x.shape_str());
    }
    if (spec.kind != DenoiserKind::multistep) {
        return detail::apply_single(spec, x, y, spec.kind == DenoiserKind::identity ? 0.0 : spec.lambda_at(t));
    }
    DenoiserSpec fallback;
    fallback.kind = DenoiserKind::shrink_smooth;
    fallback.radius = spec.radius;
    fallback.channels = spec.channels;
    const DenoiserSpec& inner = spec.inner ? *spec.inner : fallback;
    Tensor<T> state = x;
    for (int k = 0; k < spec.inner_steps; ++k) {
        state = detail::apply_single(inner, state, y, spec.inner_lambda(k));
    }
    return state;
}

template <class T>
Tensor<T> apply(const DenoiserSpec& spec, const Tensor<T>& x, int t) {
    return apply(spec, x, Conditioning<T>{}, t);
}

/// Conditioning data missing for a window.
class ConditioningError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/**
 * @brief Parent data available for conditioning.
 *
 * `data` covers `region` in parent lattice coordinates; one parent pixel spans `scale` window pixels per axis.
 * `mask_channel` names the parent channel holding availability flags, if any.
 */
template <class T>
struct ParentView {
    const Tensor<T>& data;
    Region region;
    std::int64_t scale = 1;
    std::optional<int> mask_channel;
};

/// Parent pixels needed to condition a child region at the given scale.
inline Region conditioning_footprint(const Region& child, std::int64_t scale) {
    return Region::from_bounds(floor_div(child.x0, scale), floor_div(child.y0, scale), ceil_div(child.x1(), scale), ceil_div(child.y1(), scale));
}

/**
 * Builds `y_i` for window `idx`: nearest-neighbour crop of the parent, scalar climate channels, availability mask,
 * and noise fill of unavailable entries from `fill`. Noise is addressed by absolute child coordinates, so the result
 * is seed-consistent.
 */
template <class T>
Conditioning<T> conditioning_for_window(const ParentView<T>& parent, const WindowLayout& layout, const WindowIndex& idx, const std::vector<double>& scalars, const NoiseStream& fill) {
    if (parent.scale < 1) {
        throw std::invalid_argument("conditioning scale must be >= 1");
    }
    const Region wr = window_region(layout, idx);
    const Region need = conditioning_footprint(wr, parent.scale);
    if (!parent.region.contains(need)) {
        throw ConditioningError("parent data " + parent.region.str() + " does not cover the conditioning footprint " + need.str() + " of window " + idx.str());
    }
    if (parent.mask_channel && (*parent.mask_channel < 0 || *parent.mask_channel >= parent.data.channels())) {
        throw std::invalid_argument("mask channel out of range");
    }

    const int spatial_channels = parent.data.channels() - (parent.mask_channel ? 1 : 0);
    Conditioning<T> out;
    out.scalars = scalars;
    out.spatial = Tensor<T>(spatial_channels, wr.height, wr.width);
    out.mask = Tensor<T>(1, wr.height, wr.width, T{1});
    out.climate = Tensor<T>(static_cast<int>(scalars.size()), wr.height, wr.width);

    for (std::int64_t py = 0; py < wr.height; ++py) {
        const std::int64_t gy = wr.y0 + py;
        const std::int64_t sy = floor_div(gy, parent.scale) - parent.region.y0;
        for (std::int64_t px = 0; px < wr.width; ++px) {
            const std::int64_t gx = wr.x0 + px;
            const std::int64_t sx = floor_div(gx, parent.scale) - parent.region.x0;
            bool available = true;
            if (parent.mask_channel) {
                available = parent.data(*parent.mask_channel, sy, sx) != T{0};
                out.mask(0, py, px) = available ? T{1} : T{0};
            }
            int dst = 0;
            for (int c = 0; c < parent.data.channels(); ++c) {
                if (parent.mask_channel && c == *parent.mask_channel) {
                    continue;
                }
                T v = parent.data(c, sy, sx);
                if (!available && !std::isfinite(static_cast<double>(v))) {
                    v = static_cast<T>(noise_at(fill, gx, gy, dst));
                }
                out.spatial(dst, py, px) = v;
                ++dst;
            }
            for (std::size_t k = 0; k < scalars.size(); ++k) {
                const int ch = static_cast<int>(k);
                out.climate(ch, py, px) = available ? static_cast<T>(scalars[k]) : static_cast<T>(noise_at(fill, gx, gy, spatial_channels + ch));
            }
        }
    }
    return out;
}

/// Scalars only, with no parent: climate channels filled with the scalar values.
template <class T>
Conditioning<T> scalar_conditioning(const WindowLayout& layout, const std::vector<double>& scalars) {
    Conditioning<T> out;
    out.scalars = scalars;
    out.mask = Tensor<T>(1, layout.window, layout.window, T{1});
    out.climate = Tensor<T>(static_cast<int>(scalars.size()), layout.window, layout.window);
    for (std::size_t k = 0; k < scalars.size(); ++k) {
        auto ch = out.climate.channel(static_cast<int>(k));
        std::fill(ch.begin(), ch.end(), static_cast<T>(scalars[k]));
    }
    return out;
}

/// Nearest-rank index (0-based) of the 5th percentile among `n` sorted values.
constexpr std::size_t p5_rank(std::size_t n) {
    const std::size_t rank = (5 * n + 99) / 100;
    return rank == 0 ? 0 : rank - 1;
}

/**
 * Per-patch features of channel 0: mean, 5th percentile (lower nearest rank) and a mask of ones.
 * The output has shape `3 x height/patch x width/patch`.
 */
template <class T>
Tensor<T> coarse_patch_features(const Tensor<T>& elevation, std::int64_t patch) {
    if (patch < 1) {
        throw std::invalid_argument("patch size must be positive");
    }
    if (elevation.channels() < 1) {
        throw ShapeError("patch features need at least one channel");
    }
    if (elevation.height() % patch != 0 || elevation.width() % patch != 0) {
        throw ShapeError("region " + elevation.shape_str() + " is not divisible by patch size " + std::to_string(patch));
    }
    const std::int64_t oh = elevation.height() / patch;
    const std::int64_t ow = elevation.width() / patch;
    Tensor<T> out(3, oh, ow);
    std::vector<T> values(static_cast<std::size_t>(patch * patch));
    for (std::int64_t cy = 0; cy < oh; ++cy) {
        for (std::int64_t cx = 0; cx < ow; ++cx) {
            double sum = 0.0;
            std::size_t k = 0;
            for (std::int64_t y = 0; y < patch; ++y) {
                for (std::int64_t x = 0; x < patch; ++x) {
                    const T v = elevation(0, cy * patch + y, cx * patch + x);
                    values[k++] = v;
                    sum += static_cast<double>(v);
                }
            }
            std::sort(values.begin(), values.end());
            out(0, cy, cx) = static_cast<T>(sum / static_cast<double>(values.size()));
            out(1, cy, cx) = values[p5_rank(values.size())];
            out(2, cy, cx) = T{1};
        }
    }
    return out;
}

} // namespace infdiff

#endif
