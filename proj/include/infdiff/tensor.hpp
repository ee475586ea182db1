#ifndef INFDIFF_TENSOR_HPP
#define INFDIFF_TENSOR_HPP

#include <algorithm>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "grid.hpp"

namespace infdiff {

/// Shape or channel-count disagreement between tensors.
class ShapeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/**
 * @brief Dense channels-first tensor of shape `channels x height x width`.
 *
 * Storage is row-major within each channel. A tensor carries no lattice position of its own;
 * functions that move data between lattice regions take the regions explicitly.
 */
template <class T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;

    Tensor(int channels, std::int64_t height, std::int64_t width, T fill = T{}) : channels_(channels), height_(height), width_(width) {
        if (channels < 0 || height < 0 || width < 0) {
            throw ShapeError("negative tensor dimension");
        }
        data_.assign(static_cast<std::size_t>(channels) * static_cast<std::size_t>(height * width), fill);
    }

    int channels() const { return channels_; }
    std::int64_t height() const { return height_; }
    std::int64_t width() const { return width_; }
    std::size_t size() const { return data_.size(); }
    std::size_t plane_size() const { return static_cast<std::size_t>(height_ * width_); }
    bool empty() const { return data_.empty(); }

    T& operator()(int c, std::int64_t y, std::int64_t x) {
        return data_[index(c, y, x)];
    }

    const T& operator()(int c, std::int64_t y, std::int64_t x) const {
        return data_[index(c, y, x)];
    }

    std::span<T> channel(int c) {
        return std::span<T>(data_).subspan(static_cast<std::size_t>(c) * plane_size(), plane_size());
    }

    std::span<const T> channel(int c) const {
        return std::span<const T>(data_).subspan(static_cast<std::size_t>(c) * plane_size(), plane_size());
    }

    std::vector<T>& values() { return data_; }
    const std::vector<T>& values() const { return data_; }

    bool same_shape(const Tensor& other) const {
        return channels_ == other.channels_ && height_ == other.height_ && width_ == other.width_;
    }

    std::string shape_str() const {
        return std::to_string(channels_) + "x" + std::to_string(height_) + "x" + std::to_string(width_);
    }

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    std::size_t index(int c, std::int64_t y, std::int64_t x) const {
        return (static_cast<std::size_t>(c) * static_cast<std::size_t>(height_) + static_cast<std::size_t>(y)) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(x);
    }

    int channels_ = 0;
    std::int64_t height_ = 0;
    std::int64_t width_ = 0;
    std::vector<T> data_;
};

/// Converts element type, channel by channel.
template <class To, class From>
Tensor<To> tensor_cast(const Tensor<From>& in) {
    Tensor<To> out(in.channels(), in.height(), in.width());
    std::transform(in.values().begin(), in.values().end(), out.values().begin(), [](From v) { return static_cast<To>(v); });
    return out;
}

/**
 * Copies the `sub` part of a tensor whose lattice extent is `extent`.
 * `sub` must lie inside `extent`.
 */
template <class T>
Tensor<T> crop(const Tensor<T>& src, const Region& extent, const Region& sub) {
    if (!extent.contains(sub)) {
        throw ShapeError("crop region " + sub.str() + " is not inside " + extent.str());
    }
    Tensor<T> out(src.channels(), sub.height, sub.width);
    const std::int64_t dx = sub.x0 - extent.x0;
    const std::int64_t dy = sub.y0 - extent.y0;
    for (int c = 0; c < src.channels(); ++c) {
        for (std::int64_t y = 0; y < sub.height; ++y) {
            const T* row = &src(c, y + dy, dx);
            std::copy(row, row + sub.width, &out(c, y, 0));
        }
    }
    return out;
}

/// Adds `src` (lattice extent `src_extent`) into `dst` (extent `dst_extent`) over their intersection.
template <class T>
void add_into(Tensor<T>& dst, const Region& dst_extent, const Tensor<T>& src, const Region& src_extent) {
    auto overlap = dst_extent.intersection(src_extent);
    if (!overlap) {
        return;
    }
    const int channels = std::min(dst.channels(), src.channels());
    for (int c = 0; c < channels; ++c) {
        for (std::int64_t y = overlap->y0; y < overlap->y1(); ++y) {
            T* out = &dst(c, y - dst_extent.y0, overlap->x0 - dst_extent.x0);
            const T* in = &src(c, y - src_extent.y0, overlap->x0 - src_extent.x0);
            for (std::int64_t x = 0; x < overlap->width; ++x) {
                out[x] += in[x];
            }
        }
    }
}

/// Copies `src` into `dst` over the intersection of their extents.
template <class T>
void copy_into(Tensor<T>& dst, const Region& dst_extent, const Tensor<T>& src, const Region& src_extent) {
    auto overlap = dst_extent.intersection(src_extent);
    if (!overlap) {
        return;
    }
    const int channels = std::min(dst.channels(), src.channels());
    for (int c = 0; c < channels; ++c) {
        for (std::int64_t y = overlap->y0; y < overlap->y1(); ++y) {
            const T* in = &src(c, y - src_extent.y0, overlap->x0 - src_extent.x0);
            std::copy(in, in + overlap->width, &dst(c, y - dst_extent.y0, overlap->x0 - dst_extent.x0));
        }
    }
}

/**
 * Splits an accumulator tensor whose last channel holds summed weights into the weighted mean.
 * Pixels with zero accumulated weight map to exactly zero.
 */
template <class T>
Tensor<T> divide_by_weight(const Tensor<T>& acc) {
    if (acc.channels() < 2) {
        throw ShapeError("accumulator needs at least one data channel and one weight channel");
    }
    const int data_channels = acc.channels() - 1;
    Tensor<T> out(data_channels, acc.height(), acc.width());
    auto weight = acc.channel(data_channels);
    for (int c = 0; c < data_channels; ++c) {
        auto in = acc.channel(c);
        auto dst = out.channel(c);
        for (std::size_t k = 0; k < dst.size(); ++k) {
            dst[k] = weight[k] == T{0} ? T{0} : in[k] / weight[k];
        }
    }
    return out;
}

} // namespace infdiff

#endif
