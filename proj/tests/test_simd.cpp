#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "lumisplit/simd/kernels.hpp"

using namespace lumisplit::simd;

namespace {

bool avx2_usable() { return avx2::compiled() && detected_isa() == Isa::Avx2; }

std::vector<float> random_vec(std::size_t n, std::mt19937& rng, float lo = -1.0f, float hi = 1.0f) {
    std::uniform_real_distribution<float> u(lo, hi);
    std::vector<float> v(n);
    for (auto& x : v) x = u(rng);
    return v;
}

// Naive double-precision oracle for op(A) op(B).
std::vector<double> naive_gemm(Trans ta, Trans tb, int m, int n, int k, double alpha, const std::vector<float>& a,
                               int lda, const std::vector<float>& b, int ldb, double beta,
                               const std::vector<float>& c0, int ldc) {
    std::vector<double> c(c0.begin(), c0.end());
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            double s = 0;
            for (int p = 0; p < k; ++p) {
                const double av = ta == Trans::No ? a[static_cast<std::size_t>(i) * lda + p] : a[static_cast<std::size_t>(p) * lda + i];
                const double bv = tb == Trans::No ? b[static_cast<std::size_t>(p) * ldb + j] : b[static_cast<std::size_t>(j) * ldb + p];
                s += av * bv;
            }
            double& out = c[static_cast<std::size_t>(i) * ldc + j];
            out = alpha * s + (beta == 0.0 ? 0.0 : beta * out);
        }
    return c;
}

using GemmFn = void (*)(Trans, Trans, int, int, int, float, const float*, int, const float*, int, float, float*, int);

void check_gemm(GemmFn fn, Trans ta, Trans tb, int m, int n, int k, float alpha, float beta, std::mt19937& rng) {
    const int lda = (ta == Trans::No ? k : m) + 3;
    const int ldb = (tb == Trans::No ? n : k) + 1;
    const int ldc = n + 2;
    const auto a = random_vec(static_cast<std::size_t>(ta == Trans::No ? m : k) * lda, rng);
    const auto b = random_vec(static_cast<std::size_t>(tb == Trans::No ? k : n) * ldb, rng);
    auto c = random_vec(static_cast<std::size_t>(m) * ldc, rng);
    if (beta == 0.0f)
        for (auto& x : c) x = std::numeric_limits<float>::quiet_NaN();
    auto expect_in = c;
    for (auto& x : expect_in)
        if (std::isnan(x)) x = 0.0f;
    const auto expect = naive_gemm(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, expect_in, ldc);
    fn(ta, tb, m, n, k, alpha, a.data(), lda, b.data(), ldb, beta, c.data(), ldc);
    const double tol = 1e-5 * (k + 1);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            const auto idx = static_cast<std::size_t>(i) * ldc + j;
            REQUIRE(std::abs(c[idx] - expect[idx]) <= tol);
        }
}

}  // namespace

TEST_CASE("scalar gemm matches a double-precision oracle for every transpose combination") {
    std::mt19937 rng(1);
    for (Trans ta : {Trans::No, Trans::Yes})
        for (Trans tb : {Trans::No, Trans::Yes})
            for (int m : {1, 5, 7, 13})
                for (int n : {1, 3, 17})
                    for (int k : {1, 4, 9}) check_gemm(&ref::gemm, ta, tb, m, n, k, 0.7f, 0.3f, rng);
}

TEST_CASE("avx2 gemm agrees with the oracle on ragged shapes") {
    if (!avx2_usable()) {
        MESSAGE("AVX2 not available; skipped");
        return;
    }
    std::mt19937 rng(2);
    const int dims[] = {1, 5, 6, 7, 15, 16, 17, 33, 97, 130};
    for (Trans ta : {Trans::No, Trans::Yes})
        for (Trans tb : {Trans::No, Trans::Yes})
            for (int m : dims)
                for (int n : {1, 16, 31, 130})
                    for (int k : {1, 9, 72, 300}) {
                        check_gemm(&avx2::gemm, ta, tb, m, n, k, 1.0f, 0.0f, rng);
                        check_gemm(&avx2::gemm, ta, tb, m, n, k, -0.5f, 1.0f, rng);
                    }
}

TEST_CASE("avx2 gemm spans several cache blocks") {
    if (!avx2_usable()) return;
    std::mt19937 rng(3);
    check_gemm(&avx2::gemm, Trans::No, Trans::No, 200, 1100, 300, 1.0f, 0.5f, rng);
    check_gemm(&avx2::gemm, Trans::Yes, Trans::Yes, 101, 67, 520, 2.0f, 0.0f, rng);
}

TEST_CASE("gemm with zero k scales C by beta") {
    std::vector<float> c{1, 2, 3, 4};
    ref::gemm(Trans::No, Trans::No, 2, 2, 0, 1.0f, nullptr, 1, nullptr, 2, 0.5f, c.data(), 2);
    CHECK(c == std::vector<float>{0.5f, 1.0f, 1.5f, 2.0f});
    if (avx2_usable()) {
        std::vector<float> d{1, 2, 3, 4};
        avx2::gemm(Trans::No, Trans::No, 2, 2, 0, 1.0f, nullptr, 1, nullptr, 2, 0.0f, d.data(), 2);
        CHECK(d == std::vector<float>{0, 0, 0, 0});
    }
}

TEST_CASE("leaky relu forward and backward: reference vs avx2") {
    std::mt19937 rng(4);
    for (std::size_t n : {1u, 7u, 8u, 9u, 63u, 1000u}) {
        const auto x = random_vec(n, rng);
        const auto dy = random_vec(n, rng);
        std::vector<float> y_ref(n), dx_ref(n);
        ref::leaky_relu(x.data(), y_ref.data(), n, 0.2f);
        for (std::size_t i = 0; i < n; ++i) CHECK(y_ref[i] == (x[i] >= 0 ? x[i] : 0.2f * x[i]));
        ref::leaky_relu_backward(y_ref.data(), dy.data(), dx_ref.data(), n, 0.2f);
        for (std::size_t i = 0; i < n; ++i) CHECK(dx_ref[i] == (y_ref[i] > 0 ? dy[i] : 0.2f * dy[i]));
        if (!avx2_usable()) continue;
        std::vector<float> y(n), dx(n);
        avx2::leaky_relu(x.data(), y.data(), n, 0.2f);
        avx2::leaky_relu_backward(y.data(), dy.data(), dx.data(), n, 0.2f);
        CHECK(y == y_ref);
        CHECK(dx == dx_ref);
    }
}

TEST_CASE("adam update: reference vs avx2") {
    std::mt19937 rng(5);
    const AdamStep step{1e-3f, 0.9f, 0.999f, 1e-8f, 1.0f - 0.9f * 0.9f, 1.0f - 0.999f * 0.999f};
    for (std::size_t n : {1u, 5u, 8u, 13u, 257u}) {
        const auto g = random_vec(n, rng);
        auto w1 = random_vec(n, rng);
        auto m1 = random_vec(n, rng, 0.0f, 0.1f);
        auto v1 = random_vec(n, rng, 0.0f, 0.1f);
        auto w2 = w1, m2 = m1, v2 = v1;
        // Closed form for one element.
        const double m_new = 0.9 * m1[0] + 0.1 * g[0];
        const double v_new = 0.999 * v1[0] + 0.001 * g[0] * g[0];
        const double w_new = w1[0] - 1e-3 * (m_new / step.bias_correction1) /
                                         (std::sqrt(v_new / step.bias_correction2) + 1e-8);
        ref::adam_update(w1.data(), g.data(), m1.data(), v1.data(), n, step);
        CHECK(w1[0] == doctest::Approx(w_new).epsilon(1e-5));
        if (!avx2_usable()) continue;
        avx2::adam_update(w2.data(), g.data(), m2.data(), v2.data(), n, step);
        for (std::size_t i = 0; i < n; ++i) {
            CHECK(w2[i] == doctest::Approx(w1[i]).epsilon(1e-6));
            CHECK(m2[i] == doctest::Approx(m1[i]).epsilon(1e-6));
            CHECK(v2[i] == doctest::Approx(v1[i]).epsilon(1e-6));
        }
    }
}

TEST_CASE("active isa can be forced to scalar and dispatch follows it") {
    const Isa before = active_isa();
    set_active_isa(Isa::Scalar);
    CHECK(active_isa() == Isa::Scalar);
    CHECK(isa_name(Isa::Scalar) == "scalar");
    std::mt19937 rng(6);
    const auto a = random_vec(12, rng), b = random_vec(12, rng);
    std::vector<float> c1(9), c2(9);
    gemm(Trans::No, Trans::No, 3, 3, 4, 1.0f, a.data(), 4, b.data(), 3, 0.0f, c1.data(), 3);
    ref::gemm(Trans::No, Trans::No, 3, 3, 4, 1.0f, a.data(), 4, b.data(), 3, 0.0f, c2.data(), 3);
    CHECK(c1 == c2);
    if (avx2_usable()) {
        set_active_isa(Isa::Avx2);
        CHECK(active_isa() == Isa::Avx2);
    } else {
        CHECK_THROWS(set_active_isa(Isa::Avx2));
    }
    set_active_isa(before);
}

TEST_CASE("double gemm is exact on small integers") {
    const std::vector<double> a{1, 2, 3, 4, 5, 6};  // 2x3
    const std::vector<double> b{7, 8, 9, 10, 11, 12};  // 3x2
    std::vector<double> c(4, 0.0);
    gemm(Trans::No, Trans::No, 2, 2, 3, 1.0, a.data(), 3, b.data(), 2, 0.0, c.data(), 2);
    CHECK(c == std::vector<double>{58, 64, 139, 154});
}
