#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "lumisplit/data.hpp"
#include "lumisplit/losses.hpp"
#include "lumisplit/model.hpp"

namespace lumisplit::evaluation {

inline constexpr double kPsnrCap = 100.0;
inline constexpr int kLongHorizon = 10;

/// 10 log10(1 / MSE) for [0, 1] images, capped at 100 dB.
double psnr(const Frame& a, const Frame& b);

/// Mean SSIM over the valid region of an 11x11 Gaussian window
/// (sigma 1.5, k1 = 0.01, k2 = 0.03, data range 1), averaged over channels.
/// Throws InvalidArgument when an image is smaller than the window.
double ssim(const Frame& a, const Frame& b);

/// Mean over frame pairs (t, t + horizon) of the masked mean absolute
/// difference between frame t and frame t + horizon sampled along the
/// composed flow. `flows` are consecutive flows (flows[t]: t -> t+1).
/// Throws InvalidArgument with fewer than horizon + 1 frames.
double temporal_loss(const std::vector<Frame>& frames, const std::vector<data::FlowField>& flows, int horizon);

enum class Mode { Output, RTerm };
std::string mode_name(Mode m);
Mode parse_mode(const std::string& name);

/// Closest-frame reference: t - 1, or t + 1 for the first frame.
int reference_index(int t, int length);

/// Produces the decomposition of frame t of a clip.
using Enhancer = std::function<losses::Decomposition<float>(const data::ClipPair& clip, int t)>;

/// forward_single on low-light frame t with the closest-frame reference.
Enhancer model_enhancer(const model::DecompositionNet<float>& net);

struct ClipMetrics {
    std::string clip_id;
    int frames = 0;
    double psnr = 0;
    double ssim = 0;
    double input_psnr = 0;
    double input_ssim = 0;
    std::optional<double> temporal_short;
    std::optional<double> temporal_long;
    std::optional<double> temporal_short_R;
    std::optional<double> temporal_long_R;
};

struct EvalReport {
    Mode mode = Mode::Output;
    std::vector<ClipMetrics> clips;
    ClipMetrics mean;  // clip_id "mean"; optional fields averaged over clips that have them
};

struct EvalOptions {
    Mode mode = Mode::Output;
    std::filesystem::path out_dir;  // empty: no files written
    bool write_frames = true;
    bool dump_decomposition = false;
    float l_max = 4.0f;  // L dumps are written as L / l_max
};

EvalReport evaluate(const Enhancer& enhancer, const std::vector<data::ClipPair>& dataset, const EvalOptions& options);

/// Loads the checkpoint and dataset and runs evaluate with the model enhancer.
EvalReport evaluate(const std::filesystem::path& checkpoint, const std::filesystem::path& data_dir,
                    const EvalOptions& options);

std::string report_json(const EvalReport& report, int indent = 2);

/// Decompositions of every frame of a clip with closest-frame references.
std::vector<losses::Decomposition<float>> enhance_frames(const model::DecompositionNet<float>& net,
                                                         const std::vector<Frame>& frames);

/// Writes `<dir>/enhanced/%04d.png` and optionally `L/` and `R/` dumps.
void write_enhanced(const std::filesystem::path& dir, const std::vector<losses::Decomposition<float>>& outputs,
                    bool dump_decomposition, float l_max);

}  // namespace lumisplit::evaluation
