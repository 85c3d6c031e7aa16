#include <spdlog/spdlog.h>

#include <cstdio>
#include <nlohmann/json.hpp>

#include "lumisplit/evaluation.hpp"
#include "lumisplit/training.hpp"

namespace lumisplit::evaluation {

using losses::Decomposition;

std::string mode_name(Mode m) { return m == Mode::Output ? "output" : "R_term"; }

Mode parse_mode(const std::string& name) {
    if (name == "output") return Mode::Output;
    if (name == "R_term") return Mode::RTerm;
    throw InvalidArgument("unknown evaluation mode '" + name + "' (expected output or R_term)");
}

int reference_index(int t, int length) {
    if (length < 2) throw InvalidArgument("reference_index: clip needs at least 2 frames");
    if (t < 0 || t >= length) throw InvalidArgument("reference_index: t out of range");
    return t == 0 ? 1 : t - 1;
}

Enhancer model_enhancer(const model::DecompositionNet<float>& net) {
    return [&net](const data::ClipPair& clip, int t) {
        const auto& frames = clip.low.frames;
        const int r = reference_index(t, clip.length());
        return net.forward_single(frames[static_cast<std::size_t>(t)], frames[static_cast<std::size_t>(r)]);
    };
}

std::vector<Decomposition<float>> enhance_frames(const model::DecompositionNet<float>& net,
                                                 const std::vector<Frame>& frames) {
    const int T = static_cast<int>(frames.size());
    std::vector<Decomposition<float>> out;
    out.reserve(frames.size());
    for (int t = 0; t < T; ++t) {
        const auto& ref = T >= 2 ? frames[static_cast<std::size_t>(reference_index(t, T))] : frames.front();
        out.push_back(net.forward_single(frames[static_cast<std::size_t>(t)], ref));
    }
    return out;
}

void write_enhanced(const std::filesystem::path& dir, const std::vector<Decomposition<float>>& outputs,
                    bool dump_decomposition, float l_max) {
    for (std::size_t t = 0; t < outputs.size(); ++t) {
        const auto name = data::frame_name(static_cast<int>(t));
        data::write_png(dir / "enhanced" / name, model::compose(outputs[t], true));
        if (!dump_decomposition) continue;
        Frame L = outputs[t].illumination;
        for (auto& v : L.values()) v = std::clamp(v / l_max, 0.0f, 1.0f);
        data::write_png(dir / "L" / name, L);
        data::write_png(dir / "R" / name, outputs[t].reflectance);
    }
}

namespace {

void average_into(std::optional<double>& dst, const std::vector<ClipMetrics>& clips,
                  std::optional<double> ClipMetrics::*field) {
    double s = 0;
    int n = 0;
    for (const auto& c : clips)
        if ((c.*field).has_value()) {
            s += *(c.*field);
            ++n;
        }
    if (n) dst = s / n;
}

}  // namespace

EvalReport evaluate(const Enhancer& enhancer, const std::vector<data::ClipPair>& dataset, const EvalOptions& options) {
    if (dataset.empty()) throw DataError("empty dataset");
    EvalReport report;
    report.mode = options.mode;
    for (const auto& clip : dataset) {
        const int T = clip.length();
        ClipMetrics m;
        m.clip_id = clip.id();
        m.frames = T;
        std::vector<Decomposition<float>> outs;
        std::vector<Frame> enhanced, reflect;
        for (int t = 0; t < T; ++t) {
            outs.push_back(enhancer(clip, t));
            enhanced.push_back(model::compose(outs.back(), true));
            if (options.mode == Mode::RTerm) reflect.push_back(outs.back().reflectance);
            const auto& gt = clip.normal.frames[static_cast<std::size_t>(t)];
            const auto& low = clip.low.frames[static_cast<std::size_t>(t)];
            m.psnr += psnr(enhanced.back(), gt) / T;
            m.ssim += ssim(enhanced.back(), gt) / T;
            m.input_psnr += psnr(low, gt) / T;
            m.input_ssim += ssim(low, gt) / T;
        }
        m.temporal_short = temporal_loss(enhanced, clip.flows, 1);
        if (T > kLongHorizon) m.temporal_long = temporal_loss(enhanced, clip.flows, kLongHorizon);
        if (options.mode == Mode::RTerm) {
            m.temporal_short_R = temporal_loss(reflect, clip.flows, 1);
            if (T > kLongHorizon) m.temporal_long_R = temporal_loss(reflect, clip.flows, kLongHorizon);
        }
        if (!options.out_dir.empty() && options.write_frames)
            write_enhanced(options.out_dir / clip.id(), outs, options.dump_decomposition, options.l_max);
        report.clips.push_back(std::move(m));
    }
    auto& mean = report.mean;
    mean.clip_id = "mean";
    for (const auto& c : report.clips) {
        const double w = 1.0 / static_cast<double>(report.clips.size());
        mean.frames += c.frames;
        mean.psnr += w * c.psnr;
        mean.ssim += w * c.ssim;
        mean.input_psnr += w * c.input_psnr;
        mean.input_ssim += w * c.input_ssim;
    }
    average_into(mean.temporal_short, report.clips, &ClipMetrics::temporal_short);
    average_into(mean.temporal_long, report.clips, &ClipMetrics::temporal_long);
    average_into(mean.temporal_short_R, report.clips, &ClipMetrics::temporal_short_R);
    average_into(mean.temporal_long_R, report.clips, &ClipMetrics::temporal_long_R);
    if (!options.out_dir.empty()) {
        std::filesystem::create_directories(options.out_dir);
        const auto path = options.out_dir / "eval_report.json";
        std::FILE* f = std::fopen(path.string().c_str(), "wb");
        if (!f) throw DataError("cannot write '" + path.string() + "'");
        const auto text = report_json(report) + "\n";
        std::fwrite(text.data(), 1, text.size(), f);
        std::fclose(f);
    }
    return report;
}

EvalReport evaluate(const std::filesystem::path& checkpoint, const std::filesystem::path& data_dir,
                    const EvalOptions& options) {
    const auto net = training::load_model_from_checkpoint(checkpoint);
    const auto dataset = data::load_dataset(data_dir);
    for (const auto& clip : dataset) {
        try {
            net.config().check_input_size(clip.normal.height(), clip.normal.width());
        } catch (const InvalidArgument& e) {
            throw InvalidArgument("clip '" + clip.id() + "': " + e.what() + "; pad or crop the frames");
        }
    }
    auto opts = options;
    opts.l_max = net.config().l_max;
    spdlog::info("evaluating {} clips in mode {}", dataset.size(), mode_name(options.mode));
    return evaluate(model_enhancer(net), dataset, opts);
}

namespace {

nlohmann::json metrics_json(const ClipMetrics& m) {
    auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
    return {{"clip_id", m.clip_id},
            {"frames", m.frames},
            {"psnr", m.psnr},
            {"ssim", m.ssim},
            {"input_psnr", m.input_psnr},
            {"input_ssim", m.input_ssim},
            {"temporal_short", opt(m.temporal_short)},
            {"temporal_long", opt(m.temporal_long)},
            {"temporal_short_R", opt(m.temporal_short_R)},
            {"temporal_long_R", opt(m.temporal_long_R)}};
}

}  // namespace

std::string report_json(const EvalReport& report, int indent) {
    nlohmann::json j;
    j["mode"] = mode_name(report.mode);
    j["flow_source"] = "synthetic ground-truth flow (exact), not estimated";
    j["temporal_long_horizon"] = kLongHorizon;
    j["value_range"] = "[0, 1]";
    j["clips"] = nlohmann::json::array();
    for (const auto& c : report.clips) j["clips"].push_back(metrics_json(c));
    j["mean"] = metrics_json(report.mean);
    return j.dump(indent);
}

}  // namespace lumisplit::evaluation
