#ifndef INFDIFF_GRID_HPP
#define INFDIFF_GRID_HPP

#include <algorithm>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

/**
 * @file grid.hpp
 * @brief Lattice regions, sliding-window layouts and weight windows.
 */

namespace infdiff {

/// Floor division that rounds toward negative infinity.
constexpr std::int64_t floor_div(std::int64_t a, std::int64_t b) {
    std::int64_t q = a / b;
    if ((a % b != 0) && ((a < 0) != (b < 0))) {
        --q;
    }
    return q;
}

constexpr std::int64_t ceil_div(std::int64_t a, std::int64_t b) {
    return -floor_div(-a, b);
}

/// Non-negative remainder, `0 <= floor_mod(a, b) < b` for positive `b`.
constexpr std::int64_t floor_mod(std::int64_t a, std::int64_t b) {
    return a - floor_div(a, b) * b;
}

/**
 * @brief Half-open rectangle `[x0, x0 + width) x [y0, y0 + height)` on the integer lattice.
 *
 * Coordinates may be negative. Width and height are always at least 1.
 */
struct Region {
    std::int64_t x0 = 0;
    std::int64_t y0 = 0;
    std::int64_t width = 1;
    std::int64_t height = 1;

    Region() = default;

    Region(std::int64_t x, std::int64_t y, std::int64_t w, std::int64_t h) : x0(x), y0(y), width(w), height(h) {
        if (w < 1 || h < 1) {
            throw std::invalid_argument("region extent must be positive, got " + std::to_string(w) + "x" + std::to_string(h));
        }
    }

    /// Region from corner coordinates, `[xa, xb) x [ya, yb)`.
    static Region from_bounds(std::int64_t xa, std::int64_t ya, std::int64_t xb, std::int64_t yb) {
        return Region(xa, ya, xb - xa, yb - ya);
    }

    std::int64_t x1() const { return x0 + width; }
    std::int64_t y1() const { return y0 + height; }
    std::int64_t area() const { return width * height; }

    bool contains(std::int64_t x, std::int64_t y) const {
        return x >= x0 && x < x1() && y >= y0 && y < y1();
    }

    bool contains(const Region& other) const {
        return other.x0 >= x0 && other.x1() <= x1() && other.y0 >= y0 && other.y1() <= y1();
    }

    bool intersects(const Region& other) const {
        return x0 < other.x1() && other.x0 < x1() && y0 < other.y1() && other.y0 < y1();
    }

    std::optional<Region> intersection(const Region& other) const {
        if (!intersects(other)) {
            return std::nullopt;
        }
        return from_bounds(std::max(x0, other.x0), std::max(y0, other.y0), std::min(x1(), other.x1()), std::min(y1(), other.y1()));
    }

    Region expanded(std::int64_t margin) const {
        return from_bounds(x0 - margin, y0 - margin, x1() + margin, y1() + margin);
    }

    Region translated(std::int64_t dx, std::int64_t dy) const {
        return Region(x0 + dx, y0 + dy, width, height);
    }

    /// Smallest region containing both.
    Region bounding_union(const Region& other) const {
        return from_bounds(std::min(x0, other.x0), std::min(y0, other.y0), std::max(x1(), other.x1()), std::max(y1(), other.y1()));
    }

    friend bool operator==(const Region&, const Region&) = default;

    std::string str() const {
        return "[" + std::to_string(x0) + "," + std::to_string(x1()) + ")x[" + std::to_string(y0) + "," + std::to_string(y1()) + ")";
    }
};

/**
 * @brief Index of a sliding window.
 *
 * Ordering is lexicographic on `(j, i)`. This canonical order is the accumulation order used everywhere,
 * so results never depend on the order in which windows happen to be evaluated.
 */
struct WindowIndex {
    std::int64_t i = 0;
    std::int64_t j = 0;

    friend bool operator==(const WindowIndex&, const WindowIndex&) = default;

    friend std::strong_ordering operator<=>(const WindowIndex& a, const WindowIndex& b) {
        if (auto c = a.j <=> b.j; c != 0) {
            return c;
        }
        return a.i <=> b.i;
    }

    std::string str() const {
        return "(" + std::to_string(i) + "," + std::to_string(j) + ")";
    }
};

struct WindowIndexHash {
    std::size_t operator()(const WindowIndex& w) const noexcept {
        std::uint64_t h = static_cast<std::uint64_t>(w.i) * 0x9E3779B97F4A7C15ULL;
        h ^= static_cast<std::uint64_t>(w.j) + 0x632BE59BD9B4E019ULL + (h << 6) + (h >> 2);
        return static_cast<std::size_t>(h);
    }
};

/**
 * @brief Square sliding-window geometry: side length, stride and lattice offset.
 *
 * Window `(i, j)` covers `[i*stride + offset_x, i*stride + offset_x + window)` horizontally, and likewise vertically.
 * Requiring `1 <= stride <= window` guarantees every lattice pixel lies in at least one window.
 */
struct WindowLayout {
    std::int64_t window = 1;
    std::int64_t stride = 1;
    std::int64_t offset_x = 0;
    std::int64_t offset_y = 0;

    WindowLayout() = default;

    WindowLayout(std::int64_t w, std::int64_t s, std::int64_t ox = 0, std::int64_t oy = 0) : window(w), stride(s), offset_x(ox), offset_y(oy) {
        validate();
    }

    void validate() const {
        if (window < 1) {
            throw std::invalid_argument("window size must be positive");
        }
        if (stride < 1 || stride > window) {
            throw std::invalid_argument("stride must satisfy 1 <= stride <= window (window=" + std::to_string(window) + ", stride=" + std::to_string(stride) + ")");
        }
    }

    /// Maximum number of windows covering a single pixel along one axis.
    std::int64_t per_axis_cover() const {
        return ceil_div(window, stride);
    }

    friend bool operator==(const WindowLayout&, const WindowLayout&) = default;
};

inline Region window_region(const WindowLayout& layout, const WindowIndex& idx) {
    return Region(idx.i * layout.stride + layout.offset_x, idx.j * layout.stride + layout.offset_y, layout.window, layout.window);
}

/**
 * @brief Inclusive rectangle of window indices.
 */
struct WindowRange {
    std::int64_t i0 = 0, i1 = -1;
    std::int64_t j0 = 0, j1 = -1;

    bool empty() const { return i1 < i0 || j1 < j0; }

    std::size_t size() const {
        return empty() ? 0 : static_cast<std::size_t>((i1 - i0 + 1) * (j1 - j0 + 1));
    }

    bool contains(const WindowIndex& w) const {
        return w.i >= i0 && w.i <= i1 && w.j >= j0 && w.j <= j1;
    }

    /// Visits indices in canonical `(j, i)` order.
    template <class Fn>
    void for_each(Fn&& fn) const {
        for (std::int64_t j = j0; j <= j1; ++j) {
            for (std::int64_t i = i0; i <= i1; ++i) {
                fn(WindowIndex{i, j});
            }
        }
    }
};

/// Index range of the windows intersecting `r`, computed arithmetically.
inline WindowRange overlapping_range(const WindowLayout& layout, const Region& r) {
    WindowRange out;
    out.i0 = floor_div(r.x0 - layout.offset_x - layout.window, layout.stride) + 1;
    out.i1 = floor_div(r.x1() - layout.offset_x - 1, layout.stride);
    out.j0 = floor_div(r.y0 - layout.offset_y - layout.window, layout.stride) + 1;
    out.j1 = floor_div(r.y1() - layout.offset_y - 1, layout.stride);
    return out;
}

/// All windows intersecting `r`, sorted canonically.
inline std::vector<WindowIndex> windows_overlapping(const WindowLayout& layout, const Region& r) {
    auto range = overlapping_range(layout, r);
    std::vector<WindowIndex> out;
    out.reserve(range.size());
    range.for_each([&](const WindowIndex& w) { out.push_back(w); });
    return out;
}

/// Upper bound on the number of windows overlapping any single window region.
inline std::int64_t max_window_overlap(const WindowLayout& layout) {
    auto range = overlapping_range(layout, window_region(layout, WindowIndex{0, 0}));
    return static_cast<std::int64_t>(range.size());
}

/// Smallest region containing every window that intersects `r`.
inline Region region_union_cover(const WindowLayout& layout, const Region& r) {
    auto range = overlapping_range(layout, r);
    Region lo = window_region(layout, WindowIndex{range.i0, range.j0});
    Region hi = window_region(layout, WindowIndex{range.i1, range.j1});
    return lo.bounding_union(hi);
}

/**
 * @brief Dense `window x window` grid of strictly positive blending weights.
 */
class WeightMap {
public:
    WeightMap() = default;

    WeightMap(std::int64_t size, std::vector<double> values) : size_(size), values_(std::move(values)) {
        if (size < 1 || values_.size() != static_cast<std::size_t>(size * size)) {
            throw std::invalid_argument("weight map value count does not match its size");
        }
        for (double v : values_) {
            if (!(v > 0.0)) {
                throw std::invalid_argument("weight map entries must be strictly positive");
            }
        }
    }

    std::int64_t size() const { return size_; }

    double operator()(std::int64_t row, std::int64_t col) const {
        return values_[static_cast<std::size_t>(row * size_ + col)];
    }

    const std::vector<double>& values() const { return values_; }

    friend bool operator==(const WeightMap&, const WeightMap&) = default;

private:
    std::int64_t size_ = 0;
    std::vector<double> values_;
};

/**
 * 1-D profile that is 1 at the center and falls linearly to `epsilon` at both ends.
 * Even lengths get a flat two-sample peak so the profile stays symmetric.
 */
inline std::vector<double> linear_weight_profile(std::int64_t window, double epsilon) {
    if (window < 1) {
        throw std::invalid_argument("window size must be positive");
    }
    if (!(epsilon > 0.0) || epsilon > 1.0) {
        throw std::invalid_argument("epsilon must lie in (0, 1]");
    }

    std::vector<double> profile(static_cast<std::size_t>(window), 1.0);
    const std::int64_t lo_peak = (window - 1) / 2;
    const std::int64_t hi_peak = window / 2;
    const std::int64_t reach = lo_peak; // distance from a peak sample to the boundary
    if (reach == 0) {
        return profile;
    }

    for (std::int64_t k = 0; k < window; ++k) {
        std::int64_t d = 0;
        if (k < lo_peak) {
            d = lo_peak - k;
        } else if (k > hi_peak) {
            d = k - hi_peak;
        }
        double& w = profile[static_cast<std::size_t>(k)];
        if (d == 0) {
            w = 1.0;
        } else if (d == reach) {
            w = epsilon;
        } else {
            w = (static_cast<double>(reach - d) + static_cast<double>(d) * epsilon) / static_cast<double>(reach);
        }
    }
    return profile;
}

inline constexpr double default_weight_epsilon = 0.01;

/// Separable linear weight window, the outer product of two linear profiles.
inline WeightMap linear_weight_window(std::int64_t window, double epsilon = default_weight_epsilon) {
    auto profile = linear_weight_profile(window, epsilon);
    std::vector<double> values(static_cast<std::size_t>(window * window));
    for (std::int64_t r = 0; r < window; ++r) {
        for (std::int64_t c = 0; c < window; ++c) {
            values[static_cast<std::size_t>(r * window + c)] = profile[static_cast<std::size_t>(r)] * profile[static_cast<std::size_t>(c)];
        }
    }
    return WeightMap(window, std::move(values));
}

inline WeightMap constant_weight_window(std::int64_t window) {
    return WeightMap(window, std::vector<double>(static_cast<std::size_t>(window * window), 1.0));
}

} // namespace infdiff

#endif
