#include <algorithm>
#include <cmath>
#include <string>

#include "lumisplit/data.hpp"

namespace lumisplit {

void validate_frame(const Frame& f, const std::string& what) {
    if (f.channels() != 3)
        throw InvalidArgument(what + ": expected 3 channels, got " + std::to_string(f.channels()));
    if (f.height() < 8 || f.width() < 8)
        throw InvalidArgument(what + ": frame must be at least 8x8, got " + f.shape_string());
    for (float v : f.values()) {
        if (!std::isfinite(v) || v < 0.0f || v > 1.0f)
            throw InvalidArgument(what + ": pixel value outside [0,1]");
    }
}

}  // namespace lumisplit

namespace lumisplit::data {

std::size_t FlowField::valid_count() const noexcept {
    std::size_t n = 0;
    for (auto v : valid) n += v ? 1 : 0;
    return n;
}

double FlowField::valid_fraction() const noexcept {
    return valid.empty() ? 0.0 : static_cast<double>(valid_count()) / static_cast<double>(valid.size());
}

void FlowField::mask_out_of_bounds() {
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const std::size_t i = index(y, x);
            const double tx = x + static_cast<double>(dx[i]);
            const double ty = y + static_cast<double>(dy[i]);
            // Tolerate float round-off of analytic flows landing on the border.
            constexpr double kSlack = 1e-4;
            const bool inside = tx >= -kSlack && ty >= -kSlack && tx <= width - 1 + kSlack &&
                                ty <= height - 1 + kSlack && std::isfinite(tx) && std::isfinite(ty);
            valid[i] = inside ? 1 : 0;
        }
    }
}

namespace {

double sample_plane(const std::vector<float>& plane, int h, int w, double x, double y) {
    const double cx = std::clamp(x, 0.0, static_cast<double>(w - 1));
    const double cy = std::clamp(y, 0.0, static_cast<double>(h - 1));
    const int x0 = static_cast<int>(std::floor(cx));
    const int y0 = static_cast<int>(std::floor(cy));
    const int x1 = std::min(x0 + 1, w - 1);
    const int y1 = std::min(y0 + 1, h - 1);
    const double fx = cx - x0;
    const double fy = cy - y0;
    auto at = [&](int yy, int xx) { return static_cast<double>(plane[static_cast<std::size_t>(yy) * w + xx]); };
    return (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x1)) + fy * ((1 - fx) * at(y1, x0) + fx * at(y1, x1));
}

}  // namespace

FlowField compose_flows(const FlowField& first, const FlowField& second) {
    if (first.height != second.height || first.width != second.width)
        throw ShapeError("compose_flows: flow sizes differ");
    FlowField out(first.height, first.width);
    for (int y = 0; y < first.height; ++y) {
        for (int x = 0; x < first.width; ++x) {
            const std::size_t i = first.index(y, x);
            const double mx = x + static_cast<double>(first.dx[i]);
            const double my = y + static_cast<double>(first.dy[i]);
            const double sdx = sample_plane(second.dx, second.height, second.width, mx, my);
            const double sdy = sample_plane(second.dy, second.height, second.width, mx, my);
            out.dx[i] = static_cast<float>(first.dx[i] + sdx);
            out.dy[i] = static_cast<float>(first.dy[i] + sdy);
            bool ok = first.valid[i] != 0;
            if (ok) {
                // The second mask must hold at every tap the bilinear sample touched.
                const double cx = std::clamp(mx, 0.0, static_cast<double>(first.width - 1));
                const double cy = std::clamp(my, 0.0, static_cast<double>(first.height - 1));
                const int x0 = static_cast<int>(std::floor(cx));
                const int y0 = static_cast<int>(std::floor(cy));
                const int x1 = std::min(x0 + 1, first.width - 1);
                const int y1 = std::min(y0 + 1, first.height - 1);
                const double fx = cx - x0;
                const double fy = cy - y0;
                auto tap = [&](int yy, int xx, double wgt) {
                    if (wgt > 0.0 && !second.valid[second.index(yy, xx)]) ok = false;
                };
                tap(y0, x0, (1 - fx) * (1 - fy));
                tap(y0, x1, fx * (1 - fy));
                tap(y1, x0, (1 - fx) * fy);
                tap(y1, x1, fx * fy);
            }
            out.valid[i] = ok ? 1 : 0;
        }
    }
    // Conjunction with the direct bounds check of the composed displacement.
    std::vector<std::uint8_t> chained = out.valid;
    out.mask_out_of_bounds();
    for (std::size_t i = 0; i < chained.size(); ++i) out.valid[i] = out.valid[i] && chained[i];
    return out;
}

template <class T>
Image<T> warp_to_source(const Image<T>& later, const FlowField& flow) {
    if (later.height() != flow.height || later.width() != flow.width)
        throw ShapeError("warp_to_source: flow " + std::to_string(flow.height) + "x" + std::to_string(flow.width) +
                         " does not match image " + later.shape_string());
    Image<T> out(later.channels(), later.height(), later.width());
    for (int y = 0; y < flow.height; ++y) {
        for (int x = 0; x < flow.width; ++x) {
            const std::size_t i = flow.index(y, x);
            const double sx = x + static_cast<double>(flow.dx[i]);
            const double sy = y + static_cast<double>(flow.dy[i]);
            for (int c = 0; c < later.channels(); ++c) out.at(c, y, x) = sample_bilinear(later, c, sx, sy);
        }
    }
    return out;
}

template <class T>
double masked_mean_abs_diff(const Image<T>& a, const Image<T>& b, const std::vector<std::uint8_t>& mask) {
    require_same_shape(a, b, "masked_mean_abs_diff");
    if (mask.size() != a.plane_size()) throw ShapeError("masked_mean_abs_diff: mask size mismatch");
    double sum = 0.0;
    std::size_t count = 0;
    for (int c = 0; c < a.channels(); ++c) {
        const T* pa = a.plane(c);
        const T* pb = b.plane(c);
        for (std::size_t i = 0; i < mask.size(); ++i) {
            if (!mask[i]) continue;
            sum += std::abs(static_cast<double>(pa[i]) - static_cast<double>(pb[i]));
            ++count;
        }
    }
    return count ? sum / static_cast<double>(count) : 0.0;
}

template Image<float> warp_to_source(const Image<float>&, const FlowField&);
template Image<double> warp_to_source(const Image<double>&, const FlowField&);
template double masked_mean_abs_diff(const Image<float>&, const Image<float>&, const std::vector<std::uint8_t>&);
template double masked_mean_abs_diff(const Image<double>&, const Image<double>&, const std::vector<std::uint8_t>&);

FlowField flow_between(const std::vector<FlowField>& consecutive, int t1, int t2) {
    if (t1 < 0 || t2 <= t1 || t2 > static_cast<int>(consecutive.size()))
        throw InvalidArgument("flow_between: need 0 <= t1 < t2 <= " + std::to_string(consecutive.size()) +
                              ", got " + std::to_string(t1) + "->" + std::to_string(t2));
    FlowField out = consecutive[static_cast<std::size_t>(t1)];
    for (int t = t1 + 1; t < t2; ++t) out = compose_flows(out, consecutive[static_cast<std::size_t>(t)]);
    return out;
}

}  // namespace lumisplit::data
