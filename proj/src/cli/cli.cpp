#include "lumisplit/cli.hpp"

#include <openssl/evp.h>
#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <nlohmann/json.hpp>
#include <ostream>
#include <random>
#include <sstream>

#include "lumisplit/data.hpp"
#include "lumisplit/evaluation.hpp"
#include "lumisplit/training.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace lumisplit::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string sha1_hex(const std::string& bytes) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha1(), nullptr) != 1)
        throw std::runtime_error("SHA-1 digest failed");
    std::ostringstream os;
    for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
    return os.str();
}

std::string read_bytes(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    if (!is) throw DataError("cannot read '" + p.string() + "'");
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

std::string utc_now() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

struct Manifest {
    json body;
    fs::path dir;

    Manifest(std::string command, const std::vector<std::string>& args, fs::path out) : dir(std::move(out)) {
        body["command"] = std::move(command);
        body["argv"] = args;
        body["started_at"] = utc_now();
    }
    void write() {
        body["finished_at"] = utc_now();
        fs::create_directories(dir);
        std::ofstream os(dir / "manifest.json");
        os << body.dump(2) << '\n';
        if (!os) throw DataError("cannot write '" + (dir / "manifest.json").string() + "'");
    }
};

std::pair<int, int> parse_size(const std::string& s) {
    const auto x = s.find_first_of("xX");
    try {
        if (x == std::string::npos) throw std::invalid_argument(s);
        std::size_t p1 = 0, p2 = 0;
        const int h = std::stoi(s.substr(0, x), &p1);
        const int w = std::stoi(s.substr(x + 1), &p2);
        if (p1 != x || p2 != s.size() - x - 1 || h < 8 || w < 8) throw std::invalid_argument(s);
        return {h, w};
    } catch (const std::exception&) {
        throw InvalidArgument("--size must be HxW with both sides >= 8, got '" + s + "'");
    }
}

std::vector<fs::path> png_files(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw DataError("source directory '" + dir.string() + "' does not exist");
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(dir)) {
        auto ext = e.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
        if (e.is_regular_file() && ext == ".png") out.push_back(e.path());
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::uint64_t mix(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

Frame crop_and_resize(const Frame& src, int h, int w, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> scale(0.6, 1.0), pos(0.0, 1.0);
    const double s = scale(rng);
    const double target_aspect = static_cast<double>(w) / h;
    int ch = static_cast<int>(src.height() * s);
    int cw = static_cast<int>(ch * target_aspect);
    if (cw > src.width()) {
        cw = src.width();
        ch = static_cast<int>(cw / target_aspect);
    }
    ch = std::clamp(ch, 8, src.height());
    cw = std::clamp(cw, 8, src.width());
    const int y0 = static_cast<int>(pos(rng) * (src.height() - ch));
    const int x0 = static_cast<int>(pos(rng) * (src.width() - cw));
    Frame crop(3, ch, cw);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < ch; ++y)
            for (int x = 0; x < cw; ++x) crop.at(c, y, x) = src.at(c, y0 + y, x0 + x);
    return data::resize_bilinear(crop, h, w);
}

// ---- commands -------------------------------------------------------------

struct SynthesizeArgs {
    std::string source_images;
    bool procedural = false;
    std::string out;
    int clips = 1;
    int frames = 5;
    std::string size = "64x64";
    std::uint64_t seed = 0;
};

int cmd_synthesize(const SynthesizeArgs& a, const std::vector<std::string>& argv, std::ostream& out) {
    if (a.frames < 2) throw InvalidArgument("--frames must be >= 2 (got " + std::to_string(a.frames) + ")");
    if (a.clips < 1) throw InvalidArgument("--clips must be >= 1");
    if (a.source_images.empty() == !a.procedural)
        throw InvalidArgument("give exactly one of --source-images DIR or --procedural");
    const auto [h, w] = parse_size(a.size);
    std::vector<Frame> sources;
    if (!a.procedural) {
        for (const auto& p : png_files(a.source_images)) {
            sources.push_back(data::read_png(p));
            validate_frame(sources.back(), p.string());
        }
        if (sources.empty()) throw DataError("no PNG images in '" + a.source_images + "'");
    }
    const fs::path root(a.out);
    fs::create_directories(root);
    Manifest manifest("synthesize", argv, root);
    for (int i = 0; i < a.clips; ++i) {
        const std::uint64_t clip_seed = mix(a.seed * 0x100000001B3ULL + static_cast<std::uint64_t>(i));
        std::ostringstream id;
        id << "clip_" << std::setw(4) << std::setfill('0') << i;
        const Frame base = a.procedural
                               ? data::procedural_frame(h, w, clip_seed)
                               : crop_and_resize(sources[static_cast<std::size_t>(i) % sources.size()], h, w, clip_seed);
        const auto pair = data::synthesize_clip_pair(base, a.frames, clip_seed, id.str());
        data::save_clip_pair(pair, root);
        spdlog::info("wrote {} ({} frames, gamma {:.2f}, scale {:.2f})", id.str(), a.frames, pair.degradation.gamma,
                     pair.degradation.scale);
    }
    manifest.body["config"] = {{"clips", a.clips}, {"frames", a.frames}, {"height", h}, {"width", w},
                               {"source", a.procedural ? "procedural" : a.source_images}};
    manifest.body["config_path"] = nullptr;
    manifest.body["seed"] = a.seed;
    manifest.body["input_hash"] = a.procedural ? sha1_hex("procedural") : content_hash({a.source_images});
    manifest.write();
    out << json{{"clips", a.clips}, {"out", root.string()}}.dump() << '\n';
    return kOk;
}

struct TrainArgs {
    std::string data;
    std::string out;
    std::string config;
    std::string ablation = "none";
    std::optional<double> perturb_px;
    std::optional<double> keep_fraction;
    bool resume = false;
};

int cmd_train(const TrainArgs& a, const std::vector<std::string>& argv, std::ostream& out) {
    training::TrainConfig cfg = a.config.empty() ? training::TrainConfig{} : training::load_config(a.config);
    if (a.ablation == "wo_lr")
        cfg.use_consistency = false;
    else if (a.ablation == "wo_ll")
        cfg.use_smoothness = false;
    else if (a.ablation == "wo_cf")
        cfg.use_cfim = false;
    else if (a.ablation == "wo_dual")
        cfg.dual_supervision = false;
    if (a.perturb_px) cfg.perturb_px = *a.perturb_px;
    if (a.keep_fraction) cfg.keep_fraction = *a.keep_fraction;
    const bool seed_overridden = training::apply_seed_override(cfg);
    cfg.validate();

    const fs::path out_dir(a.out);
    fs::create_directories(out_dir);
    Manifest manifest("train", argv, out_dir);
    json resolved;
    for (const auto& [k, v] : training::config_items(cfg)) resolved[k] = v;
    manifest.body["config_path"] = a.config.empty() ? json(nullptr) : json(a.config);
    manifest.body["config"] = resolved;
    manifest.body["ablation"] = a.ablation;
    manifest.body["use_cfim"] = cfg.use_cfim;
    manifest.body["seed"] = cfg.seed;
    manifest.body["seed_from_env"] = seed_overridden;
    manifest.body["perturb_px"] = cfg.perturb_px;
    manifest.body["keep_fraction"] = cfg.keep_fraction;
    std::string variant;
    if (cfg.perturb_px > 0) variant = "perturbed";
    if (cfg.keep_fraction < 1) variant += variant.empty() ? "reduced" : "+reduced";
    manifest.body["correspondence"] = {{"source", training::match_source_name(cfg.correspondence_source)},
                                       {"variant", variant.empty() ? json(nullptr) : json(variant)}};
    std::vector<fs::path> inputs{a.data};
    if (!a.config.empty()) inputs.emplace_back(a.config);
    manifest.body["input_hash"] = content_hash(inputs);
    {
        std::ofstream os(out_dir / "config.ini");
        os << training::format_config(cfg);
    }

    const auto result = training::fit(cfg, a.data, out_dir, a.resume);
    manifest.body["final_checkpoint"] = result.final_checkpoint.string();
    manifest.body["final_step"] = result.final_step;
    manifest.write();
    out << json{{"final_checkpoint", result.final_checkpoint.string()},
                {"step", result.final_step},
                {"total", result.last.total}}
               .dump()
        << '\n';
    return kOk;
}

struct EnhanceArgs {
    std::string ckpt;
    std::string in;
    std::string out;
    bool dump = false;
};

// Input clips for enhance: a dataset root, one clip directory, or a plain
// directory of PNG frames.
std::vector<std::pair<std::string, std::vector<Frame>>> enhance_inputs(const fs::path& in) {
    std::vector<std::pair<std::string, std::vector<Frame>>> clips;
    if (!fs::is_directory(in)) throw DataError("input directory '" + in.string() + "' does not exist");
    auto frames_in = [](const fs::path& dir) {
        std::vector<Frame> frames;
        for (const auto& p : png_files(dir)) {
            frames.push_back(data::read_png(p));
            validate_frame(frames.back(), p.string());
        }
        return frames;
    };
    const auto clip_dirs = data::list_clip_dirs(in);
    if (!clip_dirs.empty()) {
        for (const auto& d : clip_dirs) clips.emplace_back(d.filename().string(), frames_in(d / "low"));
    } else if (fs::exists(in / "meta.json")) {
        clips.emplace_back(fs::absolute(in).filename().string(), frames_in(in / "low"));
    } else {
        clips.emplace_back(fs::absolute(in).lexically_normal().filename().string(), frames_in(in));
    }
    for (const auto& [id, frames] : clips)
        if (frames.empty()) throw DataError("no input frames for clip '" + id + "'");
    return clips;
}

int cmd_enhance(const EnhanceArgs& a, const std::vector<std::string>& argv, std::ostream& out) {
    if (!fs::exists(a.ckpt)) throw CheckpointError("checkpoint '" + a.ckpt + "' not found");
    const auto net = training::load_model_from_checkpoint(a.ckpt);
    const auto clips = enhance_inputs(a.in);
    const fs::path out_dir(a.out);
    Manifest manifest("enhance", argv, out_dir);
    int written = 0;
    for (const auto& [id, frames] : clips) {
        const auto& f = frames.front();
        try {
            net.config().check_input_size(f.height(), f.width());
        } catch (const InvalidArgument& e) {
            throw InvalidArgument("clip '" + id + "': " + e.what() + "; pad or crop the frames");
        }
        for (const auto& g : frames)
            if (!g.same_shape(f)) throw DataError("clip '" + id + "': frames differ in size");
        const auto outputs = evaluation::enhance_frames(net, frames);
        evaluation::write_enhanced(out_dir / id, outputs, a.dump, net.config().l_max);
        written += static_cast<int>(outputs.size());
    }
    manifest.body["config_path"] = nullptr;
    manifest.body["config"] = {{"checkpoint", a.ckpt}, {"dump_decomposition", a.dump}};
    manifest.body["seed"] = nullptr;
    manifest.body["input_hash"] = content_hash({a.ckpt, a.in});
    manifest.write();
    out << json{{"clips", clips.size()}, {"frames", written}, {"out", out_dir.string()}}.dump() << '\n';
    return kOk;
}

struct EvaluateArgs {
    std::string ckpt;
    std::string data;
    std::string out;
    std::string mode = "output";
    bool dump = false;
};

int cmd_evaluate(const EvaluateArgs& a, const std::vector<std::string>& argv, std::ostream& out) {
    if (!fs::exists(a.ckpt)) throw CheckpointError("checkpoint '" + a.ckpt + "' not found");
    evaluation::EvalOptions opts;
    opts.mode = evaluation::parse_mode(a.mode);
    opts.out_dir = a.out;
    opts.dump_decomposition = a.dump;
    Manifest manifest("evaluate", argv, a.out);
    const auto report = evaluation::evaluate(a.ckpt, a.data, opts);
    manifest.body["config_path"] = nullptr;
    manifest.body["config"] = {{"checkpoint", a.ckpt}, {"mode", a.mode}};
    manifest.body["seed"] = nullptr;
    manifest.body["input_hash"] = content_hash({a.ckpt, a.data});
    manifest.write();
    const auto& m = report.mean;
    json summary = {{"clips", report.clips.size()}, {"psnr", m.psnr}, {"ssim", m.ssim}, {"input_psnr", m.input_psnr}};
    out << summary.dump() << '\n';
    return kOk;
}

void report_error(std::ostream& err, int code, const std::string& kind, const std::string& message) {
    err << json{{"error", {{"code", code}, {"kind", kind}, {"message", message}}}}.dump() << std::endl;
}

}  // namespace

std::string content_hash(const std::vector<fs::path>& inputs) {
    std::vector<std::pair<std::string, std::string>> entries;
    for (const auto& input : inputs) {
        const std::string label = input.filename().empty() ? input.parent_path().filename().string()
                                                            : input.filename().string();
        auto add = [&](const fs::path& file, const std::string& name) {
            const std::string bytes = read_bytes(file);
            entries.emplace_back(name, sha1_hex("blob " + std::to_string(bytes.size()) + '\0' + bytes));
        };
        if (fs::is_regular_file(input)) {
            add(input, label);
        } else if (fs::is_directory(input)) {
            for (const auto& e : fs::recursive_directory_iterator(input))
                if (e.is_regular_file()) add(e.path(), label + "/" + fs::relative(e.path(), input).generic_string());
        } else {
            throw DataError("input '" + input.string() + "' does not exist");
        }
    }
    std::sort(entries.begin(), entries.end());
    std::string listing;
    for (const auto& [name, hash] : entries) listing += hash + " " + name + "\n";
    return sha1_hex(listing);
}

void tune_allocator() {
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
    mallopt(M_TRIM_THRESHOLD, 512 << 20);
#endif
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Low-light video enhancement by illumination/reflectance decomposition", "lumisplit"};
    app.require_subcommand(1);
    bool quiet = false;
    app.add_flag("-q,--quiet", quiet, "Only log warnings and errors");

    SynthesizeArgs sa;
    auto* syn = app.add_subcommand("synthesize", "Generate synthetic low/normal-light clip pairs");
    syn->add_option("--source-images", sa.source_images, "Directory of PNG source images");
    syn->add_flag("--procedural", sa.procedural, "Use procedural source images");
    syn->add_option("--out", sa.out, "Output dataset directory")->required();
    syn->add_option("--clips", sa.clips, "Number of clips")->capture_default_str();
    syn->add_option("--frames", sa.frames, "Frames per clip")->capture_default_str();
    syn->add_option("--size", sa.size, "Frame size HxW")->capture_default_str();
    syn->add_option("--seed", sa.seed, "Random seed")->capture_default_str();

    TrainArgs ta;
    double perturb = 0, keep = 1;
    auto* tr = app.add_subcommand("train", "Train the decomposition network");
    tr->add_option("--data", ta.data, "Dataset directory")->required();
    tr->add_option("--out", ta.out, "Run directory")->required();
    tr->add_option("--config", ta.config, "key = value config file");
    tr->add_option("--ablation", ta.ablation, "Ablation")
        ->check(CLI::IsMember({"none", "wo_lr", "wo_ll", "wo_cf", "wo_dual"}))
        ->capture_default_str();
    auto* perturb_opt = tr->add_option("--perturb-px", perturb, "Uniform correspondence offset bound (pixels)");
    auto* keep_opt = tr->add_option("--keep-fraction", keep, "Fraction of correspondences kept");
    tr->add_flag("--resume", ta.resume, "Continue from the latest checkpoint in --out");

    EnhanceArgs ea;
    auto* en = app.add_subcommand("enhance", "Enhance low-light clips with a trained model");
    en->add_option("--ckpt", ea.ckpt, "Checkpoint file")->required();
    en->add_option("--in", ea.in, "Input clips")->required();
    en->add_option("--out", ea.out, "Output directory")->required();
    en->add_flag("--dump-decomposition", ea.dump, "Also write L/ and R/ maps");

    EvaluateArgs va;
    auto* ev = app.add_subcommand("evaluate", "Compute fidelity and temporal metrics");
    ev->add_option("--ckpt", va.ckpt, "Checkpoint file")->required();
    ev->add_option("--data", va.data, "Dataset directory")->required();
    ev->add_option("--out", va.out, "Output directory")->required();
    ev->add_option("--mode", va.mode, "output or R_term")
        ->check(CLI::IsMember({"output", "R_term"}))
        ->capture_default_str();
    ev->add_flag("--dump-decomposition", va.dump, "Also write L/ and R/ maps");

    try {
        std::vector<std::string> rev(args.rbegin(), args.rend());
        app.parse(rev);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kOk;
    } catch (const CLI::ParseError& e) {
        report_error(err, kUsage, "usage", e.what());
        return kUsage;
    }
    if (*perturb_opt) ta.perturb_px = perturb;
    if (*keep_opt) ta.keep_fraction = keep;
    spdlog::set_level(quiet ? spdlog::level::warn : spdlog::level::info);

    try {
        if (*syn) return cmd_synthesize(sa, args, out);
        if (*tr) return cmd_train(ta, args, out);
        if (*en) return cmd_enhance(ea, args, out);
        return cmd_evaluate(va, args, out);
    } catch (const CheckpointError& e) {
        report_error(err, kCheckpointError, "checkpoint", e.what());
        return kCheckpointError;
    } catch (const DataError& e) {
        report_error(err, kDataError, "data", e.what());
        return kDataError;
    } catch (const InvalidArgument& e) {
        report_error(err, kUsage, "usage", e.what());
        return kUsage;
    } catch (const fs::filesystem_error& e) {
        report_error(err, kDataError, "data", e.what());
        return kDataError;
    } catch (const std::exception& e) {
        report_error(err, 1, "internal", e.what());
        return 1;
    }
}

}  // namespace lumisplit::cli
