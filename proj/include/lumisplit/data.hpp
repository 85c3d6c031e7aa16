#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lumisplit/image.hpp"

namespace lumisplit::data {

/// Per-pixel displacement from frame t1 to frame t2 with an in-bounds mask.
struct FlowField {
    int height = 0;
    int width = 0;
    std::vector<float> dx;
    std::vector<float> dy;
    std::vector<std::uint8_t> valid;

    FlowField() = default;
    FlowField(int h, int w)
        : height(h), width(w), dx(static_cast<std::size_t>(h) * w, 0.0f),
          dy(static_cast<std::size_t>(h) * w, 0.0f), valid(static_cast<std::size_t>(h) * w, 1) {}

    std::size_t index(int y, int x) const noexcept { return static_cast<std::size_t>(y) * width + x; }
    std::size_t valid_count() const noexcept;
    double valid_fraction() const noexcept;

    /// Recomputes `valid` from the displacement: false where (x+dx, y+dy)
    /// leaves [0, W-1] x [0, H-1].
    void mask_out_of_bounds();

    friend bool operator==(const FlowField&, const FlowField&) = default;
};

/// Flow t0->t2 from t0->t1 and t1->t2; the second flow is sampled bilinearly
/// at the displaced location and validity is the conjunction of both masks.
FlowField compose_flows(const FlowField& first, const FlowField& second);

/// Resamples `later` into the pixel grid of the earlier frame:
/// out(p) = later(p + flow(p)), bilinear with edge clamping.
template <class T>
Image<T> warp_to_source(const Image<T>& later, const FlowField& flow);

/// Mean over masked pixels and all channels of |a - b|. Returns 0 when the
/// mask is empty.
template <class T>
double masked_mean_abs_diff(const Image<T>& a, const Image<T>& b, const std::vector<std::uint8_t>& mask);

struct Clip {
    std::string id;
    std::vector<Frame> frames;

    int length() const noexcept { return static_cast<int>(frames.size()); }
    int height() const noexcept { return frames.empty() ? 0 : frames.front().height(); }
    int width() const noexcept { return frames.empty() ? 0 : frames.front().width(); }
};

/// Throws InvalidArgument if frames are invalid, differ in size, or T < 2.
void validate_clip(const Clip& clip);

struct DegradationParams {
    double gamma = 2.2;
    double scale = 0.25;
    double read_noise_sigma = 0.0;
    double shot_noise_scale = 0.0;
    std::uint64_t seed = 0;

    void validate() const;
    friend bool operator==(const DegradationParams&, const DegradationParams&) = default;
};

/// Samples gamma in [2.0, 3.5], scale in [0.1, 0.5], read noise sigma in
/// [0.005, 0.02], shot noise scale in [0.001, 0.01].
DegradationParams sample_degradation(std::uint64_t seed);

/// clip(scale * frame^gamma + n, 0, 1) with zero-mean Gaussian n of variance
/// read^2 + shot * scale * frame^gamma. Deterministic in params.seed.
Frame synthesize_low_light(const Frame& frame, const DegradationParams& params);

/// Degrades every frame; frame t uses frame_noise_seed(params.seed, t).
Clip degrade_clip(const Clip& normal, const DegradationParams& params);
std::uint64_t frame_noise_seed(std::uint64_t clip_seed, int t);

/// Per-step similarity motion about the image center (W/2, H/2):
/// p' = c + zoom * R(rotation) * (p - c) + (tx, ty), plus optional uniform
/// translation jitter in [-jitter_px, jitter_px] drawn per step.
struct MotionSpec {
    double tx = 0.0;
    double ty = 0.0;
    double rotation_deg = 0.0;
    double zoom = 1.0;
    double jitter_px = 0.0;
};

struct MotionClip {
    Clip clip;
    std::vector<FlowField> flows;  // flows[t] maps frame t to frame t+1
};

/// Renders T frames by warping `base` with cumulative motion (bilinear, edge
/// clamped) and returns the analytic flow between consecutive frames.
/// Throws InvalidArgument if any step keeps fewer than half the pixels in
/// bounds or the last frame sees less than half of `base`.
MotionClip generate_motion_clip(const Frame& base, int length, const MotionSpec& motion,
                                std::uint64_t rng_seed, std::string clip_id = "clip");

/// Random translation/rotation/zoom motion of desk-scale magnitude.
MotionSpec sample_motion(std::uint64_t seed);

/// Flow from frame t1 to t2 (t1 < t2) composed from consecutive flows.
FlowField flow_between(const std::vector<FlowField>& consecutive, int t1, int t2);

struct ClipPair {
    Clip low;
    Clip normal;
    std::vector<FlowField> flows;  // consecutive, flows[t]: t -> t+1
    DegradationParams degradation;

    const std::string& id() const noexcept { return normal.id; }
    int length() const noexcept { return normal.length(); }
};

void validate_clip_pair(const ClipPair& pair);

/// One synthetic pair: random motion of `base` over `length` frames plus a
/// sampled degradation, all derived from `seed`. Motion is damped and redrawn
/// when the clip would drift out of view.
ClipPair synthesize_clip_pair(const Frame& base, int length, std::uint64_t seed, std::string clip_id);

/// Smooth gradients, shapes, and stripes; a stand-in source image.
Frame procedural_frame(int height, int width, std::uint64_t seed);

Frame resize_bilinear(const Frame& src, int height, int width);

// ---- IO -------------------------------------------------------------------

Frame read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Frame& frame);

void write_flow(const std::filesystem::path& path, const FlowField& flow);
FlowField read_flow(const std::filesystem::path& path);

/// Writes `root/<clip_id>/{normal,low,flow}/...` and meta.json.
void save_clip_pair(const ClipPair& pair, const std::filesystem::path& root);

/// Loads one clip directory (the directory named after the clip id).
ClipPair load_clip_pair(const std::filesystem::path& clip_dir);

/// Every subdirectory of `root` holding a meta.json, sorted by name.
std::vector<std::filesystem::path> list_clip_dirs(const std::filesystem::path& root);
std::vector<ClipPair> load_dataset(const std::filesystem::path& root);

std::string frame_name(int t);                  // "0003.png"
std::string flow_name(int t1, int t2);          // "0000_to_0001.flo"

}  // namespace lumisplit::data
