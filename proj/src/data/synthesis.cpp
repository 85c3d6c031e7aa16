#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include "lumisplit/data.hpp"

namespace lumisplit::data {

namespace {

// 2x3 affine map p' = L p + t.
struct Affine {
    double a = 1, b = 0, c = 0, d = 1, tx = 0, ty = 0;

    std::array<double, 2> apply(double x, double y) const { return {a * x + b * y + tx, c * x + d * y + ty}; }

    // this after other: p -> this(other(p))
    Affine after(const Affine& o) const {
        return {a * o.a + b * o.c, a * o.b + b * o.d, c * o.a + d * o.c, c * o.b + d * o.d,
                a * o.tx + b * o.ty + tx, c * o.tx + d * o.ty + ty};
    }

    Affine inverse() const {
        const double det = a * d - b * c;
        const double ia = d / det, ib = -b / det, ic = -c / det, id = a / det;
        return {ia, ib, ic, id, -(ia * tx + ib * ty), -(ic * tx + id * ty)};
    }
};

Affine step_transform(const MotionSpec& m, double cx, double cy, double jx, double jy) {
    const double th = m.rotation_deg * std::numbers::pi / 180.0;
    const double cs = std::cos(th) * m.zoom;
    const double sn = std::sin(th) * m.zoom;
    Affine A{cs, -sn, sn, cs, 0, 0};
    // c - L c + t
    A.tx = cx - (cs * cx - sn * cy) + m.tx + jx;
    A.ty = cy - (sn * cx + cs * cy) + m.ty + jy;
    return A;
}

Frame render(const Frame& base, const Affine& cumulative) {
    const Affine inv = cumulative.inverse();
    Frame out(base.channels(), base.height(), base.width());
    for (int y = 0; y < base.height(); ++y) {
        for (int x = 0; x < base.width(); ++x) {
            const auto [sx, sy] = inv.apply(x, y);
            for (int c = 0; c < base.channels(); ++c) out.at(c, y, x) = sample_bilinear(base, c, sx, sy);
        }
    }
    return out;
}

double coverage(const Affine& cumulative, int h, int w) {
    const Affine inv = cumulative.inverse();
    std::size_t inside = 0;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const auto [sx, sy] = inv.apply(x, y);
            if (sx >= 0 && sy >= 0 && sx <= w - 1 && sy <= h - 1) ++inside;
        }
    }
    return static_cast<double>(inside) / (static_cast<double>(h) * w);
}

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

}  // namespace

void validate_clip(const Clip& clip) {
    if (clip.length() < 2) throw InvalidArgument("clip '" + clip.id + "' needs at least 2 frames");
    for (int t = 0; t < clip.length(); ++t) {
        const Frame& f = clip.frames[static_cast<std::size_t>(t)];
        validate_frame(f, "clip '" + clip.id + "' frame " + std::to_string(t));
        if (!f.same_shape(clip.frames.front()))
            throw ShapeError("clip '" + clip.id + "': frame " + std::to_string(t) + " is " + f.shape_string() +
                             ", frame 0 is " + clip.frames.front().shape_string());
    }
}

void DegradationParams::validate() const {
    if (!(gamma >= 1.0)) throw InvalidArgument("degradation gamma must be >= 1");
    if (!(scale > 0.0 && scale <= 1.0)) throw InvalidArgument("degradation scale must be in (0, 1]");
    if (!(read_noise_sigma >= 0.0) || !(shot_noise_scale >= 0.0))
        throw InvalidArgument("degradation noise parameters must be >= 0");
}

DegradationParams sample_degradation(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> gamma(2.0, 3.5), scale(0.1, 0.5), read(0.005, 0.02), shot(0.001, 0.01);
    DegradationParams p;
    p.gamma = gamma(rng);
    p.scale = scale(rng);
    p.read_noise_sigma = read(rng);
    p.shot_noise_scale = shot(rng);
    p.seed = splitmix64(seed);
    return p;
}

Frame synthesize_low_light(const Frame& frame, const DegradationParams& params) {
    params.validate();
    Frame out(frame.channels(), frame.height(), frame.width());
    const bool noisy = params.read_noise_sigma > 0.0 || params.shot_noise_scale > 0.0;
    std::mt19937_64 rng(params.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const double read_var = params.read_noise_sigma * params.read_noise_sigma;
    const float* src = frame.data();
    float* dst = out.data();
    for (std::size_t i = 0; i < frame.size(); ++i) {
        const double clean = params.scale * std::pow(static_cast<double>(src[i]), params.gamma);
        double v = clean;
        if (noisy) v += std::sqrt(read_var + params.shot_noise_scale * clean) * normal(rng);
        dst[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
    return out;
}

std::uint64_t frame_noise_seed(std::uint64_t clip_seed, int t) {
    return splitmix64(clip_seed ^ splitmix64(static_cast<std::uint64_t>(t) + 1));
}

Clip degrade_clip(const Clip& normal, const DegradationParams& params) {
    Clip low{normal.id, {}};
    low.frames.reserve(normal.frames.size());
    for (int t = 0; t < normal.length(); ++t) {
        DegradationParams p = params;
        p.seed = frame_noise_seed(params.seed, t);
        low.frames.push_back(synthesize_low_light(normal.frames[static_cast<std::size_t>(t)], p));
    }
    return low;
}

MotionClip generate_motion_clip(const Frame& base, int length, const MotionSpec& motion, std::uint64_t rng_seed,
                                std::string clip_id) {
    validate_frame(base, "motion base");
    if (length < 2) throw InvalidArgument("generate_motion_clip: T must be >= 2, got " + std::to_string(length));
    if (!(motion.zoom > 0.0)) throw InvalidArgument("generate_motion_clip: zoom must be positive");

    const int h = base.height();
    const int w = base.width();
    const double cx = w / 2.0;
    const double cy = h / 2.0;
    std::mt19937_64 rng(rng_seed);
    std::uniform_real_distribution<double> jitter(-motion.jitter_px, motion.jitter_px);

    MotionClip out;
    out.clip.id = std::move(clip_id);
    out.clip.frames.push_back(base);
    Affine cumulative;
    for (int t = 1; t < length; ++t) {
        const double jx = motion.jitter_px > 0 ? jitter(rng) : 0.0;
        const double jy = motion.jitter_px > 0 ? jitter(rng) : 0.0;
        const Affine step = step_transform(motion, cx, cy, jx, jy);

        FlowField flow(h, w);
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const auto [nx, ny] = step.apply(x, y);
                const std::size_t i = flow.index(y, x);
                flow.dx[i] = static_cast<float>(nx - x);
                flow.dy[i] = static_cast<float>(ny - y);
            }
        }
        flow.mask_out_of_bounds();
        if (flow.valid_fraction() < 0.5)
            throw InvalidArgument("generate_motion_clip: step " + std::to_string(t - 1) + "->" + std::to_string(t) +
                                  " keeps only " + std::to_string(flow.valid_fraction() * 100.0) +
                                  "% of pixels in bounds (need >= 50%)");

        cumulative = step.after(cumulative);
        if (coverage(cumulative, h, w) < 0.5)
            throw InvalidArgument("generate_motion_clip: cumulative motion leaves < 50% of the base visible at frame " +
                                  std::to_string(t));
        out.clip.frames.push_back(render(base, cumulative));
        out.flows.push_back(std::move(flow));
    }
    return out;
}

MotionSpec sample_motion(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> shift(-2.5, 2.5), rot(-2.0, 2.0), zoom(0.985, 1.015), kind(0.0, 1.0);
    MotionSpec m;
    m.tx = shift(rng);
    m.ty = shift(rng);
    const double k = kind(rng);
    if (k > 0.4) m.rotation_deg = rot(rng);
    if (k > 0.7) m.zoom = zoom(rng);
    m.jitter_px = 0.3;
    return m;
}

ClipPair synthesize_clip_pair(const Frame& base, int length, std::uint64_t seed, std::string clip_id) {
    MotionSpec motion = sample_motion(splitmix64(seed));
    for (int attempt = 0;; ++attempt) {
        try {
            auto mc = generate_motion_clip(base, length, motion, splitmix64(seed + 1), clip_id);
            ClipPair pair;
            pair.normal = std::move(mc.clip);
            pair.flows = std::move(mc.flows);
            pair.degradation = sample_degradation(splitmix64(seed + 2));
            pair.low = degrade_clip(pair.normal, pair.degradation);
            pair.low.id = clip_id;
            return pair;
        } catch (const InvalidArgument&) {
            if (attempt >= 8) throw;
            motion.tx *= 0.5;
            motion.ty *= 0.5;
            motion.rotation_deg *= 0.5;
            motion.zoom = 1.0 + (motion.zoom - 1.0) * 0.5;
            motion.jitter_px *= 0.5;
        }
    }
}

void validate_clip_pair(const ClipPair& pair) {
    validate_clip(pair.normal);
    validate_clip(pair.low);
    if (pair.low.length() != pair.normal.length())
        throw ShapeError("clip '" + pair.id() + "': low has " + std::to_string(pair.low.length()) +
                         " frames, normal has " + std::to_string(pair.normal.length()));
    if (!pair.low.frames.front().same_shape(pair.normal.frames.front()))
        throw ShapeError("clip '" + pair.id() + "': low frames are " + pair.low.frames.front().shape_string() +
                         ", normal frames are " + pair.normal.frames.front().shape_string());
    if (static_cast<int>(pair.flows.size()) != pair.length() - 1)
        throw ShapeError("clip '" + pair.id() + "': expected " + std::to_string(pair.length() - 1) + " flows, got " +
                         std::to_string(pair.flows.size()));
    for (const auto& f : pair.flows) {
        if (f.height != pair.normal.height() || f.width != pair.normal.width())
            throw ShapeError("clip '" + pair.id() + "': flow size does not match frames");
    }
    pair.degradation.validate();
}

Frame procedural_frame(int height, int width, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    auto color = [&] { return std::array<double, 3>{0.1 + 0.8 * u(rng), 0.1 + 0.8 * u(rng), 0.1 + 0.8 * u(rng)}; };

    Frame f(3, height, width);
    const auto c0 = color();
    const auto c1 = color();
    const double angle = u(rng) * 2.0 * std::numbers::pi;
    const double gx = std::cos(angle), gy = std::sin(angle);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const double s = 0.5 + 0.5 * ((x / double(width) - 0.5) * gx + (y / double(height) - 0.5) * gy) * 1.4;
            for (int c = 0; c < 3; ++c) f.at(c, y, x) = static_cast<float>(c0[c] * (1 - s) + c1[c] * s);
        }
    }

    // Soft-edged ellipses and rectangles, some carrying a stripe texture.
    const int shapes = 6 + static_cast<int>(u(rng) * 6);
    for (int k = 0; k < shapes; ++k) {
        const auto col = color();
        const double mx = u(rng) * width, my = u(rng) * height;
        const double rx = (0.08 + 0.22 * u(rng)) * width, ry = (0.08 + 0.22 * u(rng)) * height;
        const bool ellipse = u(rng) < 0.5;
        const bool striped = u(rng) < 0.4;
        const double freq = 0.3 + 0.6 * u(rng);
        const double sa = u(rng) * std::numbers::pi;
        for (int y = 0; y < height; ++y) {
            for (int x = 0; x < width; ++x) {
                const double nx = (x - mx) / rx, ny = (y - my) / ry;
                const double dist = ellipse ? std::sqrt(nx * nx + ny * ny) : std::max(std::abs(nx), std::abs(ny));
                // ~1.5 px soft edge
                const double edge = std::clamp((1.0 - dist) * std::min(rx, ry) / 1.5, 0.0, 1.0);
                if (edge <= 0.0) continue;
                double mod = 1.0;
                if (striped) mod = 0.75 + 0.25 * std::sin(freq * (x * std::cos(sa) + y * std::sin(sa)));
                for (int c = 0; c < 3; ++c) {
                    const double v = f.at(c, y, x) * (1 - edge) + col[c] * mod * edge;
                    f.at(c, y, x) = static_cast<float>(v);
                }
            }
        }
    }
    for (float& v : f.values()) v = std::clamp(v, 0.02f, 0.98f);
    return f;
}

Frame resize_bilinear(const Frame& src, int height, int width) {
    if (height <= 0 || width <= 0) throw InvalidArgument("resize_bilinear: bad target size");
    Frame out(src.channels(), height, width);
    const double sx = static_cast<double>(src.width()) / width;
    const double sy = static_cast<double>(src.height()) / height;
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const double px = (x + 0.5) * sx - 0.5;
            const double py = (y + 0.5) * sy - 0.5;
            for (int c = 0; c < src.channels(); ++c) out.at(c, y, x) = sample_bilinear(src, c, px, py);
        }
    }
    return out;
}

}  // namespace lumisplit::data
