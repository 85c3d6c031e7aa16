#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "kernels_ref.hpp"
#include "lumisplit/simd/kernels.hpp"

namespace lumisplit::simd {

namespace ref {

void gemm(Trans ta, Trans tb, int m, int n, int k, float alpha, const float* a, int lda,
          const float* b, int ldb, float beta, float* c, int ldc) {
    detail::gemm_ref(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

void leaky_relu(const float* x, float* y, std::size_t n, float slope) {
    detail::leaky_relu_ref(x, y, n, slope);
}

void leaky_relu_backward(const float* y, const float* dy, float* dx, std::size_t n, float slope) {
    detail::leaky_relu_backward_ref(y, dy, dx, n, slope);
}

void adam_update(float* w, const float* g, float* m, float* v, std::size_t n, const AdamStep& step) {
    detail::adam_update_ref(w, g, m, v, n, step);
}

}  // namespace ref

namespace {

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(__i386__)
    __builtin_cpu_init();
    return avx2::compiled() && __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

Isa initial_isa() {
    const Isa best = cpu_has_avx2() ? Isa::Avx2 : Isa::Scalar;
    if (const char* env = std::getenv("LUMISPLIT_SIMD")) {
        const std::string v(env);
        if (v == "scalar") return Isa::Scalar;
    }
    return best;
}

std::atomic<Isa>& active() {
    static std::atomic<Isa> isa{initial_isa()};
    return isa;
}

}  // namespace

std::string_view isa_name(Isa isa) { return isa == Isa::Avx2 ? "avx2" : "scalar"; }

Isa detected_isa() {
    static const Isa isa = cpu_has_avx2() ? Isa::Avx2 : Isa::Scalar;
    return isa;
}

Isa active_isa() { return active().load(std::memory_order_relaxed); }

void set_active_isa(Isa isa) {
    if (isa == Isa::Avx2 && detected_isa() != Isa::Avx2)
        throw std::invalid_argument("AVX2/FMA is not available on this CPU");
    active().store(isa, std::memory_order_relaxed);
}

void gemm(Trans ta, Trans tb, int m, int n, int k, float alpha, const float* a, int lda,
          const float* b, int ldb, float beta, float* c, int ldc) {
    if (active_isa() == Isa::Avx2)
        avx2::gemm(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
    else
        ref::gemm(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

void gemm(Trans ta, Trans tb, int m, int n, int k, double alpha, const double* a, int lda,
          const double* b, int ldb, double beta, double* c, int ldc) {
    detail::gemm_ref(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

void leaky_relu(const float* x, float* y, std::size_t n, float slope) {
    if (active_isa() == Isa::Avx2)
        avx2::leaky_relu(x, y, n, slope);
    else
        ref::leaky_relu(x, y, n, slope);
}

void leaky_relu(const double* x, double* y, std::size_t n, double slope) {
    detail::leaky_relu_ref(x, y, n, slope);
}

void leaky_relu_backward(const float* y, const float* dy, float* dx, std::size_t n, float slope) {
    if (active_isa() == Isa::Avx2)
        avx2::leaky_relu_backward(y, dy, dx, n, slope);
    else
        ref::leaky_relu_backward(y, dy, dx, n, slope);
}

void leaky_relu_backward(const double* y, const double* dy, double* dx, std::size_t n,
                         double slope) {
    detail::leaky_relu_backward_ref(y, dy, dx, n, slope);
}

void adam_update(float* w, const float* g, float* m, float* v, std::size_t n, const AdamStep& step) {
    if (active_isa() == Isa::Avx2)
        avx2::adam_update(w, g, m, v, n, step);
    else
        ref::adam_update(w, g, m, v, n, step);
}

}  // namespace lumisplit::simd
