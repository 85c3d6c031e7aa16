#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>

#include "lumisplit/losses.hpp"
#include "test_util.hpp"

using namespace lumisplit;
using namespace lumisplit::losses;
using correspondence::Correspondence;
using correspondence::CorrespondenceSet;

namespace {

using ImageD = Image<double>;

Decomposition<double> decomp(const ImageD& l, const ImageD& r) { return {l, r}; }

CorrespondenceSet random_matches(int n, int h, int w, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> ux(0.0f, static_cast<float>(w - 1)), uy(0.0f, static_cast<float>(h - 1)),
        uw(0.2f, 1.0f);
    CorrespondenceSet s;
    s.height = h;
    s.width = w;
    for (int i = 0; i < n; ++i) s.matches.push_back({ux(rng), uy(rng), ux(rng), uy(rng), uw(rng)});
    return s;
}

// Central finite differences of f w.r.t. every element of x, compared to the
// analytic gradient element-wise.
void check_gradient(ImageD& x, const ImageD& analytic, const std::function<double()>& f) {
    const double h = 1e-3;
    REQUIRE(x.same_shape(analytic));
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double saved = x.data()[i];
        x.data()[i] = saved + h;
        const double fp = f();
        x.data()[i] = saved - h;
        const double fm = f();
        x.data()[i] = saved;
        const double numeric = (fp - fm) / (2 * h);
        const double a = analytic.data()[i];
        const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
        REQUIRE(std::abs(a - numeric) / denom < 1e-2);
    }
}

// Per-channel 2x3x8x8 batch flattened as 6x8x8 so all entries are checked
// at once.
constexpr int kC = 6, kH = 8, kW = 8;

}  // namespace

TEST_CASE("reconstruction loss examples") {
    const Frame target(3, 4, 4, 0.5f);
    CHECK(reconstruction_loss(target, Decomposition<float>{Frame(3, 4, 4, 1.0f), Frame(3, 4, 4, 0.5f)}) == 0.0f);
    CHECK(reconstruction_loss(target, Decomposition<float>{Frame(3, 4, 4, 1.0f), Frame(3, 4, 4, 0.25f)}) ==
          doctest::Approx(0.25));
    CHECK(reconstruction_loss(Frame(3, 4, 4, 0.0f), Decomposition<float>{Frame(3, 4, 4, 1.0f), Frame(3, 4, 4, 1.0f)}) ==
          doctest::Approx(1.0));
    CHECK_THROWS_AS(reconstruction_loss(Frame(3, 4, 5, 0.0f),
                                        Decomposition<float>{Frame(3, 4, 4, 1.0f), Frame(3, 4, 4, 1.0f)}),
                    ShapeError);
}

TEST_CASE("smoothness weights examples") {
    const auto w = smoothness_weights(Frame(3, 5, 6, 0.3f));
    for (float v : w.horizontal.values()) CHECK(v == doctest::Approx(10000.0).epsilon(1e-6));
    for (float v : w.vertical.values()) CHECK(v == doctest::Approx(10000.0).epsilon(1e-6));

    ImageD pair(1, 1, 2);
    pair.at(0, 0, 0) = 1.0 - kLogEpsilon;
    pair.at(0, 0, 1) = std::exp(1.0) - kLogEpsilon;
    const auto wp = smoothness_weights(pair);
    CHECK(wp.horizontal.at(0, 0, 0) == doctest::Approx(1.0 / (1.0 + 1e-4)).epsilon(1e-9));
    CHECK(wp.horizontal.at(0, 0, 1) == doctest::Approx(1e4));
}

TEST_CASE("smoothness weights match a brute-force evaluation and stay in (0, 1/delta]") {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        const auto img = testutil::random_image<double>(3, 7, 9, seed, 0.0, 0.3);
        const auto w = smoothness_weights(img);
        double max_seen = 0;
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < 7; ++y)
                for (int x = 0; x < 9; ++x) {
                    const double u = std::log(img.at(c, y, x) + 1e-6);
                    const double gx = x + 1 < 9 ? std::log(img.at(c, y, x + 1) + 1e-6) - u : 0.0;
                    const double gy = y + 1 < 7 ? std::log(img.at(c, y + 1, x) + 1e-6) - u : 0.0;
                    CHECK(w.horizontal.at(c, y, x) == doctest::Approx(1.0 / (std::abs(gx) + 1e-4)).epsilon(1e-9));
                    CHECK(w.vertical.at(c, y, x) == doctest::Approx(1.0 / (std::abs(gy) + 1e-4)).epsilon(1e-9));
                    CHECK(w.horizontal.at(c, y, x) > 0);
                    CHECK(w.horizontal.at(c, y, x) <= 1e4);
                    max_seen = std::max(max_seen, w.horizontal.at(c, y, x));
                }
        CHECK(max_seen == doctest::Approx(1e4));
    }
}

TEST_CASE("smoothness weights decrease with the log gradient") {
    double prev = 1e9;
    for (double b : {0.2, 0.3, 0.5, 0.9}) {
        ImageD img(1, 1, 2);
        img.at(0, 0, 0) = 0.1;
        img.at(0, 0, 1) = b;
        const double v = smoothness_weights(img).horizontal.at(0, 0, 0);
        CHECK(v < prev);
        prev = v;
    }
}

TEST_CASE("illumination smoothness loss examples") {
    SmoothnessWeights<double> w{ImageD(1, 1, 2, 0.9999), ImageD(1, 1, 2, 1.0)};
    ImageD l(1, 1, 2);
    l.at(0, 0, 0) = 0.2;
    l.at(0, 0, 1) = 0.4;
    CHECK(illumination_smoothness_loss(l, w) == doctest::Approx(0.019998).epsilon(1e-9));

    const auto img = testutil::random_image<double>(3, 6, 6, 4);
    const auto wr = smoothness_weights(img);
    CHECK(illumination_smoothness_loss(ImageD(3, 6, 6, 1.7), wr) == 0.0);
    auto lr = testutil::random_image<double>(3, 6, 6, 5, 0.1, 2.0);
    const double base = illumination_smoothness_loss(lr, wr);
    for (auto& v : lr.values()) v *= 2;
    CHECK(illumination_smoothness_loss(lr, wr) == doctest::Approx(4 * base).epsilon(1e-12));
}

TEST_CASE("reflectance consistency examples") {
    CorrespondenceSet one;
    one.height = one.width = 4;
    one.matches = {{1, 1, 2, 2, 0.8f}};
    Frame r1(3, 4, 4, 0.5f), r2(3, 4, 4, 0.5f);
    r2.at(0, 2, 2) = 0.7f;
    CHECK(reflectance_consistency_loss(r1, r2, one) == doctest::Approx(0.8 * 0.2 / 3).epsilon(1e-5));

    const auto r = testutil::random_image<float>(3, 8, 8, 1);
    CorrespondenceSet id;
    id.height = id.width = 8;
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) id.matches.push_back({float(x), float(y), float(x), float(y), 1});
    CHECK(reflectance_consistency_loss(r, r, id) == 0.0f);

    const auto r2b = testutil::random_image<float>(3, 8, 8, 2);
    auto m = random_matches(30, 8, 8, 3);
    const float full = reflectance_consistency_loss(r, r2b, m);
    for (auto& c : m.matches) c.weight *= 0.5f;
    CHECK(reflectance_consistency_loss(r, r2b, m) == doctest::Approx(0.5 * full).epsilon(1e-5));
    CHECK_THROWS_AS(reflectance_consistency_loss(r, r2b, CorrespondenceSet{}), InvalidArgument);
}

TEST_CASE("reflectance consistency samples bilinearly") {
    ImageD r1(1, 2, 2, 0.0), r2(1, 2, 2, 0.0);
    r2.at(0, 0, 1) = 1.0;
    CorrespondenceSet s;
    s.height = s.width = 2;
    s.matches = {{0, 0, 0.25f, 0, 1}};
    // channel mean over one channel: |0 - 0.25|
    CHECK(reflectance_consistency_loss(r1, r2, s) == doctest::Approx(0.25));
}

TEST_CASE("reflectance consistency is symmetric under endpoint swap") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto r1 = testutil::random_image<double>(3, 8, 8, seed);
        const auto r2 = testutil::random_image<double>(3, 8, 8, seed + 100);
        const auto m = random_matches(40, 8, 8, seed);
        CHECK(reflectance_consistency_loss(r1, r2, m) ==
              doctest::Approx(reflectance_consistency_loss(r2, r1, m.swapped())).epsilon(1e-12));
    }
}

TEST_CASE("finite-difference gradients of every loss") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        // Residuals kept away from the L1 kink: L R <= 0.5 < target.
        const auto target = testutil::random_image<double>(kC, kH, kW, seed, 0.6, 1.0);
        auto l = testutil::random_image<double>(kC, kH, kW, seed + 10, 0.1, 0.7);
        auto r = testutil::random_image<double>(kC, kH, kW, seed + 20, 0.1, 0.7);
        {
            auto g = decomp(l, r).zeros_like();
            reconstruction_loss_backward(target, decomp(l, r), 1.0, g);
            check_gradient(l, g.illumination, [&] { return reconstruction_loss(target, decomp(l, r)); });
            check_gradient(r, g.reflectance, [&] { return reconstruction_loss(target, decomp(l, r)); });
        }
        {
            const auto w = smoothness_weights(testutil::random_image<double>(kC, kH, kW, seed + 30, 0.0, 0.2));
            ImageD g(kC, kH, kW);
            illumination_smoothness_loss_backward(l, w, 1.0, g);
            check_gradient(l, g, [&] { return illumination_smoothness_loss(l, w); });
        }
        {
            // R1 below 0.4 and R2 above 0.6 so no channel difference crosses zero.
            auto r1 = testutil::random_image<double>(kC, kH, kW, seed + 40, 0.0, 0.4);
            auto r2 = testutil::random_image<double>(kC, kH, kW, seed + 50, 0.6, 1.0);
            const auto m = random_matches(25, kH, kW, seed);
            ImageD g1(kC, kH, kW), g2(kC, kH, kW);
            reflectance_consistency_loss_backward(r1, r2, m, 1.0, g1, g2);
            check_gradient(r1, g1, [&] { return reflectance_consistency_loss(r1, r2, m); });
            check_gradient(r2, g2, [&] { return reflectance_consistency_loss(r1, r2, m); });
        }
    }
}

TEST_CASE("backward scale multiplies gradients and accumulates") {
    const auto target = testutil::random_image<double>(3, 4, 4, 1, 0.6, 1.0);
    const auto out = decomp(testutil::random_image<double>(3, 4, 4, 2, 0.1, 0.7),
                            testutil::random_image<double>(3, 4, 4, 3, 0.1, 0.7));
    auto g1 = out.zeros_like(), g2 = out.zeros_like();
    const double v1 = reconstruction_loss_backward(target, out, 1.0, g1);
    const double v2 = reconstruction_loss_backward(target, out, 0.25, g2);
    CHECK(v1 == v2);
    CHECK(v1 == doctest::Approx(reconstruction_loss(target, out)));
    reconstruction_loss_backward(target, out, 0.75, g2);
    for (std::size_t i = 0; i < g1.illumination.size(); ++i)
        CHECK(g2.illumination.data()[i] == doctest::Approx(g1.illumination.data()[i]).epsilon(1e-12));
}

namespace {

struct ObjectiveFixture {
    ImageD n1, n2, low1, low2, l1, r1, l2, r2;
    CorrespondenceSet matches;
    SmoothnessWeights<double> w1, w2;

    explicit ObjectiveFixture(std::uint64_t seed)
        : n1(testutil::random_image<double>(3, kH, kW, seed, 0.6, 1.0)),
          n2(testutil::random_image<double>(3, kH, kW, seed + 1, 0.6, 1.0)),
          low1(testutil::random_image<double>(3, kH, kW, seed + 2, 0.0, 0.2)),
          low2(testutil::random_image<double>(3, kH, kW, seed + 3, 0.0, 0.2)),
          l1(testutil::random_image<double>(3, kH, kW, seed + 4, 0.1, 0.7)),
          r1(testutil::random_image<double>(3, kH, kW, seed + 5, 0.0, 0.4)),
          l2(testutil::random_image<double>(3, kH, kW, seed + 6, 0.1, 0.7)),
          r2(testutil::random_image<double>(3, kH, kW, seed + 7, 0.6, 0.8)),
          matches(random_matches(20, kH, kW, seed)),
          w1(smoothness_weights(low1)),
          w2(smoothness_weights(low2)) {}

    LossReport eval(const LossToggles& t, double lambda1 = 0.1, double lambda2 = 0.05) const {
        const auto o1 = decomp(l1, r1), o2 = decomp(l2, r2);
        return total_objective(ObjectiveInputs<double>{&n1, &n2, &o1, &o2, &matches, &w1, &w2}, lambda1, lambda2, t);
    }
};

}  // namespace

TEST_CASE("total objective composes its reported terms exactly") {
    ObjectiveFixture f(1);
    const auto rep = f.eval({});
    CHECK(rep.total == rep.composed_total());
    CHECK(rep.rec_t1 == doctest::Approx(reconstruction_loss(f.n1, decomp(f.l1, f.r1))));
    CHECK(rep.rec_t2 == doctest::Approx(reconstruction_loss(f.n2, decomp(f.l2, f.r2))));
    CHECK(rep.smooth_t1 == doctest::Approx(illumination_smoothness_loss(f.l1, f.w1)));
    CHECK(rep.consistency == doctest::Approx(reflectance_consistency_loss(f.r1, f.r2, f.matches)));
    CHECK(rep.lambda1 == 0.1);
    CHECK(rep.lambda2 == 0.05);

    const auto conv = total_objective(f.n1, f.n2, decomp(f.l1, f.r1), decomp(f.l2, f.r2), f.matches, f.low1, f.low2,
                                      0.1, 0.05, LossToggles{});
    CHECK(conv.total == doctest::Approx(rep.total).epsilon(1e-12));
}

TEST_CASE("total objective toggles") {
    ObjectiveFixture f(2);
    const auto rec_only = f.eval({false, false, true});
    CHECK(rec_only.smooth_t1 == 0);
    CHECK(rec_only.smooth_t2 == 0);
    CHECK(rec_only.consistency == 0);
    CHECK(rec_only.total == doctest::Approx(rec_only.rec_t1 + rec_only.rec_t2).epsilon(1e-12));

    const auto no_dual = f.eval({true, true, false});
    CHECK(no_dual.rec_t2 == 0);
    CHECK(no_dual.smooth_t2 == 0);
    CHECK(no_dual.rec_t1 > 0);
    CHECK(no_dual.total == no_dual.composed_total());

    const auto zero_lambda = f.eval({}, 0.0, 0.0);
    auto g = f;
    for (auto& v : g.w1.horizontal.values()) v *= 3;
    for (auto& m : g.matches.matches) m.weight *= 0.5f;
    CHECK(g.eval({}, 0.0, 0.0).total == zero_lambda.total);

    f.matches.matches.clear();
    const auto empty = f.eval({});
    CHECK(empty.consistency == 0);
    CHECK(empty.total == empty.composed_total());
}

TEST_CASE("total objective is zero on perfect constant predictions") {
    const ImageD n(3, 8, 8, 0.6), low(3, 8, 8, 0.1), l(3, 8, 8, 1.2), r(3, 8, 8, 0.5);
    CorrespondenceSet id;
    id.height = id.width = 8;
    for (int i = 0; i < 8; ++i) id.matches.push_back({float(i), float(i), float(i), float(i), 1});
    const auto rep = total_objective(n, n, decomp(l, r), decomp(l, r), id, low, low, 0.1, 0.05, LossToggles{});
    CHECK(rep.total == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("total objective backward matches finite differences") {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        ObjectiveFixture f(seed * 10);
        for (const LossToggles t : {LossToggles{}, LossToggles{true, true, false}}) {
            const auto o1 = decomp(f.l1, f.r1), o2 = decomp(f.l2, f.r2);
            auto g1 = o1.zeros_like(), g2 = o2.zeros_like();
            const auto rep = total_objective_backward(
                ObjectiveInputs<double>{&f.n1, &f.n2, &o1, &o2, &f.matches, &f.w1, &f.w2}, 0.1, 0.05, t, 1.0, g1, g2);
            CHECK(rep.total == doctest::Approx(f.eval(t).total).epsilon(1e-12));
            const auto total = [&] { return f.eval(t).total; };
            check_gradient(f.l1, g1.illumination, total);
            check_gradient(f.r1, g1.reflectance, total);
            check_gradient(f.l2, g2.illumination, total);
            check_gradient(f.r2, g2.reflectance, total);
        }
    }
}

TEST_CASE("every loss is non-negative") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        ObjectiveFixture f(seed);
        const auto rep = f.eval({});
        CHECK(rep.rec_t1 >= 0);
        CHECK(rep.rec_t2 >= 0);
        CHECK(rep.smooth_t1 >= 0);
        CHECK(rep.smooth_t2 >= 0);
        CHECK(rep.consistency >= 0);
    }
}
