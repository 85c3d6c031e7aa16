#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "lumisplit/data.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace lumisplit::data {

namespace {

constexpr std::array<char, 4> kFlowMagic{'L', 'S', 'F', 'L'};

template <class T>
void write_pod(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
bool read_pod(std::istream& is, T& v) {
    return static_cast<bool>(is.read(reinterpret_cast<char*>(&v), sizeof(T)));
}

}  // namespace

std::string frame_name(int t) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%04d.png", t);
    return buf;
}

std::string flow_name(int t1, int t2) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%04d_to_%04d.flo", t1, t2);
    return buf;
}

Frame read_png(const fs::path& path) {
    png_image image;
    std::memset(&image, 0, sizeof image);
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.string().c_str()))
        throw DataError("cannot read PNG '" + path.string() + "': " + image.message);
    image.format = PNG_FORMAT_RGB;
    std::vector<png_byte> buffer(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
        png_image_free(&image);
        throw DataError("cannot decode PNG '" + path.string() + "': " + image.message);
    }
    const int w = static_cast<int>(image.width);
    const int h = static_cast<int>(image.height);
    Frame f(3, h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                f.at(c, y, x) = static_cast<float>(buffer[(static_cast<std::size_t>(y) * w + x) * 3 + c]) / 255.0f;
    return f;
}

void write_png(const fs::path& path, const Frame& frame) {
    if (frame.channels() != 3) throw InvalidArgument("write_png: expected 3 channels");
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    const int w = frame.width();
    const int h = frame.height();
    std::vector<png_byte> buffer(static_cast<std::size_t>(w) * h * 3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) {
                const float v = std::clamp(frame.at(c, y, x), 0.0f, 1.0f);
                buffer[(static_cast<std::size_t>(y) * w + x) * 3 + c] =
                    static_cast<png_byte>(std::lround(v * 255.0f));
            }
    png_image image;
    std::memset(&image, 0, sizeof image);
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(w);
    image.height = static_cast<png_uint_32>(h);
    image.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&image, path.string().c_str(), 0, buffer.data(), 0, nullptr))
        throw DataError("cannot write PNG '" + path.string() + "': " + image.message);
}

void write_flow(const fs::path& path, const FlowField& flow) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open '" + path.string() + "' for writing");
    os.write(kFlowMagic.data(), kFlowMagic.size());
    write_pod(os, static_cast<std::int32_t>(flow.height));
    write_pod(os, static_cast<std::int32_t>(flow.width));
    for (std::size_t i = 0; i < flow.dx.size(); ++i) {
        write_pod(os, flow.dx[i]);
        write_pod(os, flow.dy[i]);
    }
    // Row-major mask bits, least significant bit first.
    std::vector<std::uint8_t> bits((flow.valid.size() + 7) / 8, 0);
    for (std::size_t i = 0; i < flow.valid.size(); ++i)
        if (flow.valid[i]) bits[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
    os.write(reinterpret_cast<const char*>(bits.data()), static_cast<std::streamsize>(bits.size()));
    if (!os) throw DataError("failed writing '" + path.string() + "'");
}

FlowField read_flow(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("missing flow file '" + path.string() + "'");
    std::array<char, 4> magic{};
    std::int32_t h = 0, w = 0;
    if (!is.read(magic.data(), magic.size()) || magic != kFlowMagic)
        throw DataError("flow file '" + path.string() + "' has a bad magic string");
    if (!read_pod(is, h) || !read_pod(is, w) || h <= 0 || w <= 0 || h > 1 << 15 || w > 1 << 15)
        throw DataError("flow file '" + path.string() + "' has a bad header");
    FlowField flow(h, w);
    for (std::size_t i = 0; i < flow.dx.size(); ++i) {
        if (!read_pod(is, flow.dx[i]) || !read_pod(is, flow.dy[i]))
            throw DataError("flow file '" + path.string() + "' is truncated");
    }
    std::vector<std::uint8_t> bits((flow.valid.size() + 7) / 8, 0);
    if (!is.read(reinterpret_cast<char*>(bits.data()), static_cast<std::streamsize>(bits.size())))
        throw DataError("flow file '" + path.string() + "' is truncated (mask)");
    for (std::size_t i = 0; i < flow.valid.size(); ++i) flow.valid[i] = (bits[i / 8] >> (i % 8)) & 1u;
    return flow;
}

void save_clip_pair(const ClipPair& pair, const fs::path& root) {
    validate_clip_pair(pair);
    const fs::path dir = root / pair.id();
    fs::create_directories(dir / "normal");
    fs::create_directories(dir / "low");
    fs::create_directories(dir / "flow");
    for (int t = 0; t < pair.length(); ++t) {
        write_png(dir / "normal" / frame_name(t), pair.normal.frames[static_cast<std::size_t>(t)]);
        write_png(dir / "low" / frame_name(t), pair.low.frames[static_cast<std::size_t>(t)]);
    }
    for (int t = 0; t + 1 < pair.length(); ++t) write_flow(dir / "flow" / flow_name(t, t + 1), pair.flows[static_cast<std::size_t>(t)]);

    const auto& d = pair.degradation;
    json meta = {
        {"clip_id", pair.id()},
        {"T", pair.length()},
        {"H", pair.normal.height()},
        {"W", pair.normal.width()},
        {"degradation_params",
         {{"gamma", d.gamma},
          {"scale", d.scale},
          {"read_noise_sigma", d.read_noise_sigma},
          {"shot_noise_scale", d.shot_noise_scale},
          {"seed", d.seed}}},
        {"noise_model", "heteroscedastic gaussian (read + shot), stand-in"},
        {"flow_source", "exact synthetic"},
    };
    std::ofstream os(dir / "meta.json");
    os << meta.dump(2) << '\n';
    if (!os) throw DataError("failed writing '" + (dir / "meta.json").string() + "'");
}

ClipPair load_clip_pair(const fs::path& clip_dir) {
    const fs::path meta_path = clip_dir / "meta.json";
    std::ifstream is(meta_path);
    if (!is) throw DataError("missing metadata '" + meta_path.string() + "'");
    json meta;
    int T = 0, H = 0, W = 0;
    ClipPair pair;
    try {
        meta = json::parse(is);
        T = meta.at("T").get<int>();
        H = meta.at("H").get<int>();
        W = meta.at("W").get<int>();
        const auto& d = meta.at("degradation_params");
        pair.degradation.gamma = d.at("gamma").get<double>();
        pair.degradation.scale = d.at("scale").get<double>();
        pair.degradation.read_noise_sigma = d.at("read_noise_sigma").get<double>();
        pair.degradation.shot_noise_scale = d.at("shot_noise_scale").get<double>();
        pair.degradation.seed = d.at("seed").get<std::uint64_t>();
        pair.normal.id = meta.value("clip_id", clip_dir.filename().string());
    } catch (const json::exception& e) {
        throw DataError("corrupt metadata '" + meta_path.string() + "': " + e.what());
    }
    if (T < 2 || H < 8 || W < 8) throw DataError("corrupt metadata '" + meta_path.string() + "': bad T/H/W");
    pair.low.id = pair.normal.id;

    auto load_frame = [&](const char* kind, int t) {
        const fs::path p = clip_dir / kind / frame_name(t);
        if (!fs::exists(p)) throw DataError("missing frame " + frame_name(t).substr(0, 4) + " ('" + p.string() + "')");
        Frame f = read_png(p);
        if (f.height() != H || f.width() != W)
            throw DataError("frame '" + p.string() + "' is " + std::to_string(f.height()) + "x" +
                            std::to_string(f.width()) + ", metadata says " + std::to_string(H) + "x" + std::to_string(W));
        return f;
    };
    for (int t = 0; t < T; ++t) {
        pair.normal.frames.push_back(load_frame("normal", t));
        pair.low.frames.push_back(load_frame("low", t));
    }
    for (int t = 0; t + 1 < T; ++t) {
        const fs::path p = clip_dir / "flow" / flow_name(t, t + 1);
        FlowField f = read_flow(p);
        if (f.height != H || f.width != W) throw DataError("flow '" + p.string() + "' size does not match frames");
        pair.flows.push_back(std::move(f));
    }
    try {
        validate_clip_pair(pair);
    } catch (const InvalidArgument& e) {
        throw DataError("clip '" + clip_dir.string() + "': " + e.what());
    }
    return pair;
}

std::vector<fs::path> list_clip_dirs(const fs::path& root) {
    if (!fs::is_directory(root)) throw DataError("dataset directory '" + root.string() + "' does not exist");
    std::vector<fs::path> dirs;
    for (const auto& entry : fs::directory_iterator(root))
        if (entry.is_directory() && fs::exists(entry.path() / "meta.json")) dirs.push_back(entry.path());
    std::sort(dirs.begin(), dirs.end());
    return dirs;
}

std::vector<ClipPair> load_dataset(const fs::path& root) {
    std::vector<ClipPair> out;
    for (const auto& dir : list_clip_dirs(root)) out.push_back(load_clip_pair(dir));
    if (out.empty()) throw DataError("empty dataset: no clip directories in '" + root.string() + "'");
    return out;
}

}  // namespace lumisplit::data
