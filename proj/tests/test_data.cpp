#include <doctest.h>

#include <cmath>
#include <fstream>

#include "lumisplit/data.hpp"
#include "test_util.hpp"

using namespace lumisplit;
using namespace lumisplit::data;

namespace {

Frame textured(int h, int w, std::uint64_t seed) { return procedural_frame(h, w, seed); }

}  // namespace

TEST_CASE("validate_frame rejects bad frames") {
    CHECK_NOTHROW(validate_frame(Frame(3, 8, 8, 0.5f)));
    CHECK_THROWS_AS(validate_frame(Frame(1, 8, 8, 0.5f)), InvalidArgument);
    CHECK_THROWS_AS(validate_frame(Frame(3, 7, 8, 0.5f)), InvalidArgument);
    CHECK_THROWS_AS(validate_frame(Frame(3, 8, 8, 1.5f)), InvalidArgument);
    Frame nan(3, 8, 8, 0.5f);
    nan.at(1, 2, 3) = std::nanf("");
    CHECK_THROWS_AS(validate_frame(nan), InvalidArgument);
}

TEST_CASE("zero motion gives identical frames and zero flows") {
    const Frame base = textured(16, 16, 1);
    const auto mc = generate_motion_clip(base, 5, MotionSpec{}, 7);
    REQUIRE(mc.clip.length() == 5);
    REQUIRE(mc.flows.size() == 4);
    for (const auto& f : mc.clip.frames) CHECK(testutil::max_abs_diff(f, base) < 1e-6);
    for (const auto& fl : mc.flows) {
        for (std::size_t i = 0; i < fl.dx.size(); ++i) {
            CHECK(fl.dx[i] == doctest::Approx(0.0).epsilon(1e-6));
            CHECK(fl.dy[i] == doctest::Approx(0.0).epsilon(1e-6));
        }
        CHECK(fl.valid_count() == fl.dx.size());
    }
}

TEST_CASE("pure translation flow and mask") {
    MotionSpec m;
    m.tx = 3.0;
    const auto mc = generate_motion_clip(textured(16, 16, 2), 2, m, 1);
    const auto& fl = mc.flows.at(0);
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) {
            const auto i = fl.index(y, x);
            CHECK(fl.dx[i] == doctest::Approx(3.0).epsilon(1e-5));
            CHECK(std::abs(fl.dy[i]) < 1e-5);
            CHECK(static_cast<bool>(fl.valid[i]) == (x < 13));
        }
}

TEST_CASE("rotation about the center: zero at center, 2r sin(theta/2) at the corner") {
    MotionSpec m;
    m.rotation_deg = 2.0;
    const auto mc = generate_motion_clip(textured(64, 64, 3), 5, m, 1);
    const auto& fl = mc.flows.at(0);
    const auto c = fl.index(32, 32);
    CHECK(std::hypot(fl.dx[c], fl.dy[c]) < 1e-5);
    const double r = std::hypot(32.0, 32.0);
    CHECK(r == doctest::Approx(45.25).epsilon(1e-3));
    const double expected = 2.0 * r * std::sin(1.0 * M_PI / 180.0);
    const auto k = fl.index(0, 0);
    CHECK(std::hypot(fl.dx[k], fl.dy[k]) == doctest::Approx(expected).epsilon(1e-4));
    CHECK(expected == doctest::Approx(1.58).epsilon(2e-3));
}

TEST_CASE("excessive motion is rejected") {
    MotionSpec m;
    m.tx = 40.0;
    CHECK_THROWS_AS(generate_motion_clip(textured(64, 64, 4), 2, m, 1), InvalidArgument);
    MotionSpec drift;
    drift.tx = 6.0;
    CHECK_THROWS_AS(generate_motion_clip(textured(32, 32, 4), 8, drift, 1), InvalidArgument);
    CHECK_THROWS_AS(generate_motion_clip(textured(32, 32, 4), 1, MotionSpec{}, 1), InvalidArgument);
}

TEST_CASE("translation flows compose additively on jointly valid pixels") {
    MotionSpec m;
    m.tx = 1.5;
    m.ty = -0.75;
    m.jitter_px = 0.4;
    const auto mc = generate_motion_clip(textured(32, 32, 5), 3, m, 11);
    const auto composed = compose_flows(mc.flows[0], mc.flows[1]);
    std::size_t checked = 0;
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) {
            const auto i = composed.index(y, x);
            if (!composed.valid[i]) continue;
            CHECK(composed.dx[i] == doctest::Approx(mc.flows[0].dx[i] + mc.flows[1].dx[i]).epsilon(1e-4));
            CHECK(composed.dy[i] == doctest::Approx(mc.flows[0].dy[i] + mc.flows[1].dy[i]).epsilon(1e-4));
            ++checked;
        }
    CHECK(checked > 500);
    CHECK(flow_between(mc.flows, 0, 2) == composed);
}

TEST_CASE("warping the next frame back along the flow matches the current frame") {
    for (std::uint64_t s = 0; s < 6; ++s) {
        const auto pair = synthesize_clip_pair(textured(64, 64, 100 + s), 5, 200 + s, "c");
        for (int t = 0; t + 1 < pair.length(); ++t) {
            const auto& fl = pair.flows[static_cast<std::size_t>(t)];
            const auto warped = warp_to_source(pair.normal.frames[static_cast<std::size_t>(t + 1)], fl);
            CHECK(masked_mean_abs_diff(warped, pair.normal.frames[static_cast<std::size_t>(t)], fl.valid) < 0.02);
        }
    }
}

TEST_CASE("low-light synthesis closed forms") {
    DegradationParams p;
    p.gamma = 3.0;
    p.scale = 0.4;
    CHECK(synthesize_low_light(Frame(3, 8, 8, 0.0f), p) == Frame(3, 8, 8, 0.0f));
    DegradationParams q;
    q.gamma = 2.2;
    q.scale = 0.25;
    const auto ones = synthesize_low_light(Frame(3, 8, 8, 1.0f), q);
    for (float v : ones.values()) CHECK(v == doctest::Approx(0.25).epsilon(1e-6));
    DegradationParams r;
    r.gamma = 2.0;
    r.scale = 0.2;
    const auto half = synthesize_low_light(Frame(3, 8, 8, 0.5f), r);
    for (float v : half.values()) CHECK(v == doctest::Approx(0.05).epsilon(1e-6));
}

TEST_CASE("low-light synthesis is monotone in scale without noise") {
    const Frame f = textured(16, 16, 6);
    DegradationParams a, b;
    a.gamma = b.gamma = 2.5;
    a.scale = 0.1;
    b.scale = 0.3;
    const auto la = synthesize_low_light(f, a), lb = synthesize_low_light(f, b);
    for (std::size_t i = 0; i < la.size(); ++i) CHECK(la.data()[i] <= lb.data()[i]);
}

TEST_CASE("degradation is deterministic and noise depends on the seed") {
    const Frame f = textured(16, 16, 7);
    auto p = sample_degradation(42);
    CHECK(p.gamma >= 2.0);
    CHECK(p.gamma <= 3.5);
    CHECK(p.scale >= 0.1);
    CHECK(p.scale <= 0.5);
    CHECK(p.read_noise_sigma > 0);
    CHECK(synthesize_low_light(f, p) == synthesize_low_light(f, p));
    auto p2 = p;
    p2.seed += 1;
    CHECK_FALSE(synthesize_low_light(f, p) == synthesize_low_light(f, p2));
    const auto clip = synthesize_clip_pair(f, 3, 9, "x");
    for (int t = 0; t < 3; ++t) {
        auto pt = clip.degradation;
        pt.seed = frame_noise_seed(clip.degradation.seed, t);
        CHECK(synthesize_low_light(clip.normal.frames[static_cast<std::size_t>(t)], pt) ==
              clip.low.frames[static_cast<std::size_t>(t)]);
    }
}

TEST_CASE("degradation parameter validation") {
    DegradationParams p;
    p.gamma = 0.5;
    CHECK_THROWS_AS(p.validate(), InvalidArgument);
    p = {};
    p.scale = 0.0;
    CHECK_THROWS_AS(p.validate(), InvalidArgument);
    p = {};
    p.read_noise_sigma = -1;
    CHECK_THROWS_AS(p.validate(), InvalidArgument);
}

TEST_CASE("clip pair save/load round trip") {
    testutil::TempDir dir("data");
    const auto pair = synthesize_clip_pair(textured(24, 32, 8), 5, 5, "clip_a");
    save_clip_pair(pair, dir.path());
    const auto loaded = load_clip_pair(dir / "clip_a");
    CHECK(loaded.id() == "clip_a");
    REQUIRE(loaded.length() == 5);
    for (int t = 0; t < 5; ++t) {
        CHECK(testutil::max_abs_diff(loaded.normal.frames[t], pair.normal.frames[t]) <= 0.5 / 255.0 + 1e-6);
        CHECK(testutil::max_abs_diff(loaded.low.frames[t], pair.low.frames[t]) <= 0.5 / 255.0 + 1e-6);
    }
    CHECK(loaded.flows == pair.flows);
    CHECK(loaded.degradation == pair.degradation);
    const auto all = load_dataset(dir.path());
    CHECK(all.size() == 1);
}

TEST_CASE("load errors name the offending file") {
    testutil::TempDir dir("data_err");
    const auto pair = synthesize_clip_pair(textured(16, 16, 9), 5, 6, "c");
    save_clip_pair(pair, dir.path());
    std::filesystem::remove(dir / "c" / "low" / "0003.png");
    try {
        load_clip_pair(dir / "c");
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("0003") != std::string::npos);
    }

    save_clip_pair(pair, dir.path());
    write_png(dir / "c" / "low" / "0001.png", Frame(3, 24, 16, 0.1f));
    try {
        load_clip_pair(dir / "c");
        FAIL("expected DataError");
    } catch (const DataError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("24x16") != std::string::npos);
        CHECK(msg.find("16x16") != std::string::npos);
    }

    save_clip_pair(pair, dir.path());
    std::ofstream(dir / "c" / "meta.json") << "{not json";
    CHECK_THROWS_AS(load_clip_pair(dir / "c"), DataError);

    testutil::TempDir empty("data_empty");
    try {
        load_dataset(empty.path());
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("empty dataset") != std::string::npos);
    }
}

TEST_CASE("flow file round trip preserves mask and values exactly") {
    testutil::TempDir dir("flow");
    FlowField f(5, 7);
    for (std::size_t i = 0; i < f.dx.size(); ++i) {
        f.dx[i] = 0.1f * static_cast<float>(i) - 1.3f;
        f.dy[i] = -0.07f * static_cast<float>(i);
        f.valid[i] = i % 3 != 0;
    }
    write_flow(dir / "f.flo", f);
    CHECK(read_flow(dir / "f.flo") == f);
    std::ofstream(dir / "bad.flo") << "XXXX";
    CHECK_THROWS_AS(read_flow(dir / "bad.flo"), DataError);
}

TEST_CASE("png round trip within 8-bit quantization") {
    testutil::TempDir dir("png");
    const auto f = testutil::random_image<float>(3, 9, 11, 3);
    write_png(dir / "a.png", f);
    const auto g = read_png(dir / "a.png");
    CHECK(g.same_shape(f));
    CHECK(testutil::max_abs_diff(f, g) <= 0.5 / 255.0 + 1e-6);
}

TEST_CASE("naming helpers") {
    CHECK(frame_name(3) == "0003.png");
    CHECK(flow_name(0, 1) == "0000_to_0001.flo");
}
