#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "lumisplit/error.hpp"

namespace lumisplit {

/// Planar C x H x W array. Used for frames, feature maps, and gradients.
template <class T>
class Image {
public:
    using value_type = T;

    Image() = default;
    Image(int channels, int height, int width, T fill = T(0))
        : c_(channels), h_(height), w_(width),
          data_(static_cast<std::size_t>(channels) * height * width, fill) {
        if (channels < 0 || height < 0 || width < 0) throw InvalidArgument("negative image dimension");
    }

    int channels() const noexcept { return c_; }
    int height() const noexcept { return h_; }
    int width() const noexcept { return w_; }
    std::size_t size() const noexcept { return data_.size(); }
    std::size_t plane_size() const noexcept { return static_cast<std::size_t>(h_) * w_; }
    bool empty() const noexcept { return data_.empty(); }

    T* data() noexcept { return data_.data(); }
    const T* data() const noexcept { return data_.data(); }
    std::span<T> values() noexcept { return data_; }
    std::span<const T> values() const noexcept { return data_; }

    T* plane(int c) noexcept { return data_.data() + c * plane_size(); }
    const T* plane(int c) const noexcept { return data_.data() + c * plane_size(); }

    T& at(int c, int y, int x) noexcept { return data_[(static_cast<std::size_t>(c) * h_ + y) * w_ + x]; }
    const T& at(int c, int y, int x) const noexcept {
        return data_[(static_cast<std::size_t>(c) * h_ + y) * w_ + x];
    }

    bool same_shape(const Image& o) const noexcept { return c_ == o.c_ && h_ == o.h_ && w_ == o.w_; }

    std::string shape_string() const {
        return std::to_string(c_) + "x" + std::to_string(h_) + "x" + std::to_string(w_);
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    friend bool operator==(const Image& a, const Image& b) = default;

private:
    int c_ = 0;
    int h_ = 0;
    int w_ = 0;
    std::vector<T> data_;
};

using Frame = Image<float>;

template <class T>
void require_same_shape(const Image<T>& a, const Image<T>& b, const char* what) {
    if (!a.same_shape(b))
        throw ShapeError(std::string(what) + ": shape mismatch " + a.shape_string() + " vs " + b.shape_string());
}

template <class To, class From>
Image<To> image_cast(const Image<From>& src) {
    Image<To> out(src.channels(), src.height(), src.width());
    std::transform(src.data(), src.data() + src.size(), out.data(), [](From v) { return static_cast<To>(v); });
    return out;
}

/// Bilinear sample of channel c at (x, y), coordinates clamped to the image.
template <class T>
T sample_bilinear(const Image<T>& img, int c, double x, double y) {
    const double cx = std::clamp(x, 0.0, static_cast<double>(img.width() - 1));
    const double cy = std::clamp(y, 0.0, static_cast<double>(img.height() - 1));
    const int x0 = static_cast<int>(std::floor(cx));
    const int y0 = static_cast<int>(std::floor(cy));
    const int x1 = std::min(x0 + 1, img.width() - 1);
    const int y1 = std::min(y0 + 1, img.height() - 1);
    const T fx = static_cast<T>(cx - x0);
    const T fy = static_cast<T>(cy - y0);
    const T top = (T(1) - fx) * img.at(c, y0, x0) + fx * img.at(c, y0, x1);
    const T bottom = (T(1) - fx) * img.at(c, y1, x0) + fx * img.at(c, y1, x1);
    return (T(1) - fy) * top + fy * bottom;
}

/// Adjoint of sample_bilinear: adds `g` into the four taps of (x, y).
template <class T>
void scatter_bilinear(Image<T>& grad, int c, double x, double y, T g) {
    const double cx = std::clamp(x, 0.0, static_cast<double>(grad.width() - 1));
    const double cy = std::clamp(y, 0.0, static_cast<double>(grad.height() - 1));
    const int x0 = static_cast<int>(std::floor(cx));
    const int y0 = static_cast<int>(std::floor(cy));
    const int x1 = std::min(x0 + 1, grad.width() - 1);
    const int y1 = std::min(y0 + 1, grad.height() - 1);
    const T fx = static_cast<T>(cx - x0);
    const T fy = static_cast<T>(cy - y0);
    grad.at(c, y0, x0) += g * (T(1) - fx) * (T(1) - fy);
    grad.at(c, y0, x1) += g * fx * (T(1) - fy);
    grad.at(c, y1, x0) += g * (T(1) - fx) * fy;
    grad.at(c, y1, x1) += g * fx * fy;
}

/// Throws InvalidArgument unless `f` is a 3-channel frame, at least 8x8, with
/// finite values in [0, 1].
void validate_frame(const Frame& f, const std::string& what = "frame");

}  // namespace lumisplit
