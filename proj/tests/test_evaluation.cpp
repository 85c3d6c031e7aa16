#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>

#include <nlohmann/json.hpp>

#include "lumisplit/evaluation.hpp"
#include "test_util.hpp"

using namespace lumisplit;
using namespace lumisplit::evaluation;

namespace {

// Direct windowed SSIM in double: every 11x11 window fully inside the image.
double ssim_oracle(const Frame& a, const Frame& b) {
    double g[11], gs = 0;
    for (int i = 0; i < 11; ++i) gs += g[i] = std::exp(-((i - 5) * (i - 5)) / (2 * 1.5 * 1.5));
    for (double& v : g) v /= gs;
    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    double total = 0;
    for (int c = 0; c < a.channels(); ++c) {
        double sum = 0;
        int count = 0;
        for (int y = 0; y + 11 <= a.height(); ++y)
            for (int x = 0; x + 11 <= a.width(); ++x) {
                double ma = 0, mb = 0, aa = 0, bb = 0, ab = 0;
                for (int u = 0; u < 11; ++u)
                    for (int v = 0; v < 11; ++v) {
                        const double w = g[u] * g[v];
                        const double va = a.at(c, y + u, x + v), vb = b.at(c, y + u, x + v);
                        ma += w * va;
                        mb += w * vb;
                        aa += w * va * va;
                        bb += w * vb * vb;
                        ab += w * va * vb;
                    }
                const double sa = aa - ma * ma, sb = bb - mb * mb, sab = ab - ma * mb;
                sum += ((2 * ma * mb + c1) * (2 * sab + c2)) / ((ma * ma + mb * mb + c1) * (sa + sb + c2));
                ++count;
            }
        total += sum / count;
    }
    return total / a.channels();
}

Frame noisy(const Frame& f, double sigma, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    Frame out = f;
    for (auto& v : out.values()) v = static_cast<float>(v + sigma * n(rng));
    return out;
}

losses::Decomposition<float> identity_decomposition(const data::ClipPair& clip, int t) {
    const auto& f = clip.normal.frames[static_cast<std::size_t>(t)];
    return {Frame(f.channels(), f.height(), f.width(), 1.0f), f};
}

}  // namespace

TEST_CASE("psnr closed forms and symmetry") {
    const auto a = testutil::random_image<float>(3, 16, 16, 1);
    CHECK(psnr(a, a) == kPsnrCap);
    CHECK(psnr(Frame(3, 8, 8, 0.5f), Frame(3, 8, 8, 0.6f)) == doctest::Approx(20.0).epsilon(1e-5));
    CHECK(psnr(Frame(3, 8, 8, 0.0f), Frame(3, 8, 8, 1.0f)) == doctest::Approx(0.0));
    const auto b = testutil::random_image<float>(3, 16, 16, 2);
    CHECK(psnr(a, b) == psnr(b, a));
    CHECK(psnr(a, b) >= 0.0);
    CHECK_THROWS_AS(psnr(a, Frame(3, 16, 8)), ShapeError);
}

TEST_CASE("psnr decreases strictly with added noise") {
    const auto a = testutil::random_image<float>(3, 32, 32, 3, 0.2, 0.8);
    double prev = kPsnrCap;
    for (double sigma : {0.01, 0.02, 0.05, 0.1, 0.2}) {
        const double p = psnr(a, noisy(a, sigma, 9));
        CHECK(p < prev);
        prev = p;
    }
}

TEST_CASE("ssim matches a brute-force window oracle") {
    for (std::uint64_t s = 0; s < 3; ++s) {
        const auto a = testutil::random_image<float>(3, 20, 17, s);
        const auto b = noisy(a, 0.1, s + 50);
        CHECK(ssim(a, b) == doctest::Approx(ssim_oracle(a, b)).epsilon(1e-5));
        CHECK(ssim(a, b) == doctest::Approx(ssim(b, a)).epsilon(1e-12));
        CHECK(ssim(a, b) <= 1.0);
    }
}

TEST_CASE("ssim examples") {
    const auto a = testutil::random_image<float>(3, 16, 16, 4);
    CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-9));

    Frame inv = a;
    for (auto& v : inv.values()) v = 1.0f - v;
    const double anti = ssim(a, inv);
    CHECK(anti < 0.0);
    CHECK(anti == doctest::Approx(ssim_oracle(a, inv)).epsilon(1e-5));

    const double c1 = 1e-4;
    const double expect = (2 * 0.2 * 0.6 + c1) / (0.04 + 0.36 + c1);
    CHECK(ssim(Frame(3, 12, 12, 0.2f), Frame(3, 12, 12, 0.6f)) == doctest::Approx(expect).epsilon(1e-5));
    CHECK_THROWS_AS(ssim(Frame(3, 10, 16), Frame(3, 10, 16)), InvalidArgument);
}

TEST_CASE("temporal loss: static clips, translations, horizons") {
    const Frame base = data::procedural_frame(32, 32, 5);
    const auto still = data::generate_motion_clip(base, 12, data::MotionSpec{}, 1);
    CHECK(temporal_loss(still.clip.frames, still.flows, 1) == 0.0);
    CHECK(temporal_loss(still.clip.frames, still.flows, kLongHorizon) == 0.0);

    data::MotionSpec m;
    m.tx = 1.5;
    m.ty = 0.5;
    const auto moving = data::generate_motion_clip(data::procedural_frame(64, 64, 6), 12, m, 2);
    CHECK(temporal_loss(moving.clip.frames, moving.flows, 1) <= 0.02);
    CHECK(temporal_loss(moving.clip.frames, moving.flows, kLongHorizon) <= 0.02);

    // Content that ignores the motion is penalized.
    std::vector<Frame> frozen(12, moving.clip.frames.front());
    CHECK(temporal_loss(frozen, moving.flows, 1) > temporal_loss(moving.clip.frames, moving.flows, 1));

    const auto five = data::generate_motion_clip(base, 5, data::MotionSpec{}, 1);
    CHECK_THROWS_AS(temporal_loss(five.clip.frames, five.flows, kLongHorizon), InvalidArgument);
    CHECK_THROWS_AS(temporal_loss(five.clip.frames, five.flows, 0), InvalidArgument);
}

TEST_CASE("reference index and mode names") {
    CHECK(reference_index(0, 5) == 1);
    CHECK(reference_index(1, 5) == 0);
    CHECK(reference_index(4, 5) == 3);
    CHECK(reference_index(0, 2) == 1);
    CHECK_THROWS_AS(reference_index(5, 5), InvalidArgument);
    CHECK(parse_mode("output") == Mode::Output);
    CHECK(parse_mode("R_term") == Mode::RTerm);
    CHECK(mode_name(Mode::RTerm) == "R_term");
    CHECK_THROWS_AS(parse_mode("r"), InvalidArgument);
}

TEST_CASE("identity enhancer reaches the metric bounds") {
    std::vector<data::ClipPair> ds;
    for (int i = 0; i < 2; ++i)
        ds.push_back(data::synthesize_clip_pair(data::procedural_frame(32, 32, i), 12, 10 + i, "c" + std::to_string(i)));
    EvalOptions opts;
    opts.mode = Mode::RTerm;
    const auto rep = evaluate(identity_decomposition, ds, opts);
    REQUIRE(rep.clips.size() == 2);
    for (std::size_t i = 0; i < 2; ++i) {
        const auto& c = rep.clips[i];
        CHECK(c.psnr == doctest::Approx(kPsnrCap));
        CHECK(c.ssim == doctest::Approx(1.0).epsilon(1e-9));
        CHECK(c.input_psnr < 30.0);
        CHECK(c.frames == 12);
        const double gt = temporal_loss(ds[i].normal.frames, ds[i].flows, 1);
        CHECK(*c.temporal_short == doctest::Approx(gt).epsilon(1e-6));
        CHECK(*c.temporal_short_R == doctest::Approx(gt).epsilon(1e-6));
        REQUIRE(c.temporal_long.has_value());
        CHECK(*c.temporal_long == doctest::Approx(temporal_loss(ds[i].normal.frames, ds[i].flows, 10)).epsilon(1e-6));
    }
    CHECK(rep.mean.clip_id == "mean");
    CHECK(rep.mean.psnr == doctest::Approx(kPsnrCap));
    CHECK(*rep.mean.temporal_short == doctest::Approx((*rep.clips[0].temporal_short + *rep.clips[1].temporal_short) / 2));

    CHECK_THROWS_AS(evaluate(identity_decomposition, {}, opts), DataError);
}

TEST_CASE("report json has one entry per clip and nulls for missing horizons") {
    std::vector<data::ClipPair> ds;
    for (int i = 0; i < 3; ++i)
        ds.push_back(data::synthesize_clip_pair(data::procedural_frame(16, 16, i), 5, 20 + i, "c" + std::to_string(i)));
    const auto rep = evaluate(identity_decomposition, ds, EvalOptions{});
    const auto j = nlohmann::json::parse(report_json(rep));
    CHECK(j["mode"] == "output");
    CHECK(j["temporal_long_horizon"] == 10);
    CHECK(j["value_range"] == "[0, 1]");
    CHECK(j["flow_source"].get<std::string>().find("synthetic") != std::string::npos);
    REQUIRE(j["clips"].size() == 3);
    CHECK(j["clips"][1]["clip_id"] == "c1");
    CHECK(j["clips"][0]["temporal_long"].is_null());
    CHECK(j["clips"][0]["temporal_short_R"].is_null());
    CHECK(j["mean"]["temporal_short"].is_number());
}

TEST_CASE("checkpoint evaluation writes frames and is deterministic") {
    testutil::TempDir dir("eval");
    for (int i = 0; i < 2; ++i)
        data::save_clip_pair(data::synthesize_clip_pair(data::procedural_frame(32, 32, i), 5, 30 + i,
                                                        "clip_" + std::to_string(i)),
                             dir / "data");
    model::NetworkConfig cfg;
    cfg.base_channels = 4;
    cfg.depth = 2;
    model::save_model(dir / "m.bin", model::DecompositionNet<float>(cfg, 3));

    EvalOptions opts;
    opts.out_dir = dir / "out";
    opts.dump_decomposition = true;
    const auto a = evaluate(dir / "m.bin", dir / "data", opts);
    EvalOptions quiet;
    const auto b = evaluate(dir / "m.bin", dir / "data", quiet);
    CHECK(report_json(a) == report_json(b));
    for (const char* sub : {"enhanced", "L", "R"})
        for (int t = 0; t < 5; ++t)
            CHECK(std::filesystem::exists(dir / "out" / "clip_1" / sub / data::frame_name(t)));
    CHECK(std::filesystem::exists(dir / "out" / "eval_report.json"));
    std::ifstream is(dir / "out" / "eval_report.json");
    CHECK(nlohmann::json::parse(is)["clips"].size() == 2);

    cfg.depth = 6;
    model::save_model(dir / "deep.bin", model::DecompositionNet<float>(cfg, 3));
    try {
        evaluate(dir / "deep.bin", dir / "data", quiet);
        FAIL("expected InvalidArgument");
    } catch (const InvalidArgument& e) {
        CHECK(std::string(e.what()).find("pad or crop") != std::string::npos);
    }
    CHECK_THROWS_AS(evaluate(dir / "none.bin", dir / "data", quiet), CheckpointError);
}

TEST_CASE("model enhancer uses the closest frame as reference") {
    model::NetworkConfig cfg;
    cfg.base_channels = 4;
    cfg.depth = 2;
    const model::DecompositionNet<float> net(cfg, 8);
    const auto clip = data::synthesize_clip_pair(data::procedural_frame(16, 16, 1), 5, 3, "c");
    const auto enh = model_enhancer(net);
    const auto outs = enhance_frames(net, clip.low.frames);
    REQUIRE(outs.size() == 5);
    for (int t = 0; t < 5; ++t) {
        const auto ref = clip.low.frames[static_cast<std::size_t>(reference_index(t, 5))];
        const auto expect = net.forward_single(clip.low.frames[static_cast<std::size_t>(t)], ref);
        CHECK(enh(clip, t).reflectance == expect.reflectance);
        CHECK(outs[static_cast<std::size_t>(t)].illumination == expect.illumination);
    }
}
