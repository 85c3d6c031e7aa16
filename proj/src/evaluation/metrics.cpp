#include <array>
#include <cmath>

#include "lumisplit/evaluation.hpp"

namespace lumisplit::evaluation {

namespace {

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;

std::array<double, kWindow> gaussian_taps() {
    std::array<double, kWindow> g{};
    double sum = 0;
    for (int i = 0; i < kWindow; ++i) {
        const double d = i - kWindow / 2;
        g[static_cast<std::size_t>(i)] = std::exp(-d * d / (2 * kSigma * kSigma));
        sum += g[static_cast<std::size_t>(i)];
    }
    for (auto& v : g) v /= sum;
    return g;
}

// Separable "valid" filtering of an H x W plane.
std::vector<double> filter_valid(const std::vector<double>& src, int H, int W) {
    static const auto g = gaussian_taps();
    const int oh = H - kWindow + 1, ow = W - kWindow + 1;
    std::vector<double> rows(static_cast<std::size_t>(H) * ow);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < ow; ++x) {
            double s = 0;
            for (int k = 0; k < kWindow; ++k) s += g[static_cast<std::size_t>(k)] * src[static_cast<std::size_t>(y) * W + x + k];
            rows[static_cast<std::size_t>(y) * ow + x] = s;
        }
    std::vector<double> out(static_cast<std::size_t>(oh) * ow);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            double s = 0;
            for (int k = 0; k < kWindow; ++k) s += g[static_cast<std::size_t>(k)] * rows[static_cast<std::size_t>(y + k) * ow + x];
            out[static_cast<std::size_t>(y) * ow + x] = s;
        }
    return out;
}

}  // namespace

double psnr(const Frame& a, const Frame& b) {
    require_same_shape(a, b, "psnr");
    if (a.size() == 0) throw InvalidArgument("psnr: empty image");
    double se = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a.data()[i]) - b.data()[i];
        se += d * d;
    }
    const double mse = se / static_cast<double>(a.size());
    if (mse == 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double ssim(const Frame& a, const Frame& b) {
    require_same_shape(a, b, "ssim");
    const int H = a.height(), W = a.width();
    if (H < kWindow || W < kWindow)
        throw InvalidArgument("ssim: image " + a.shape_string() + " is smaller than the 11x11 window");
    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    const std::size_t n = a.plane_size();
    double total = 0;
    for (int c = 0; c < a.channels(); ++c) {
        std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
        for (std::size_t i = 0; i < n; ++i) {
            x[i] = a.plane(c)[i];
            y[i] = b.plane(c)[i];
            xx[i] = x[i] * x[i];
            yy[i] = y[i] * y[i];
            xy[i] = x[i] * y[i];
        }
        const auto mx = filter_valid(x, H, W), my = filter_valid(y, H, W);
        const auto sxx = filter_valid(xx, H, W), syy = filter_valid(yy, H, W), sxy = filter_valid(xy, H, W);
        double sum = 0;
        for (std::size_t i = 0; i < mx.size(); ++i) {
            const double va = sxx[i] - mx[i] * mx[i];
            const double vb = syy[i] - my[i] * my[i];
            const double cov = sxy[i] - mx[i] * my[i];
            sum += ((2 * mx[i] * my[i] + c1) * (2 * cov + c2)) / ((mx[i] * mx[i] + my[i] * my[i] + c1) * (va + vb + c2));
        }
        total += sum / static_cast<double>(mx.size());
    }
    return total / a.channels();
}

double temporal_loss(const std::vector<Frame>& frames, const std::vector<data::FlowField>& flows, int horizon) {
    if (horizon < 1) throw InvalidArgument("temporal_loss: horizon must be >= 1");
    const int T = static_cast<int>(frames.size());
    if (T < horizon + 1)
        throw InvalidArgument("temporal_loss: need at least " + std::to_string(horizon + 1) + " frames for horizon " +
                              std::to_string(horizon) + ", got " + std::to_string(T));
    if (static_cast<int>(flows.size()) < T - 1)
        throw InvalidArgument("temporal_loss: expected " + std::to_string(T - 1) + " consecutive flows");
    double sum = 0;
    int pairs = 0;
    for (int t = 0; t + horizon < T; ++t) {
        const auto flow = data::flow_between(flows, t, t + horizon);
        const auto& later = frames[static_cast<std::size_t>(t + horizon)];
        const auto& earlier = frames[static_cast<std::size_t>(t)];
        if (flow.height != earlier.height() || flow.width != earlier.width())
            throw ShapeError("temporal_loss: flow size does not match frames");
        sum += data::masked_mean_abs_diff(data::warp_to_source(later, flow), earlier, flow.valid);
        ++pairs;
    }
    return sum / pairs;
}

}  // namespace lumisplit::evaluation
