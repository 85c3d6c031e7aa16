#pragma once

// Data-parallel kernels with a scalar reference path and an AVX2/FMA path.
// The active path is picked once at startup from CPUID and can be forced
// with set_active_isa() or the LUMISPLIT_SIMD environment variable
// ("scalar" or "avx2").

#include <cstddef>
#include <string_view>

namespace lumisplit::simd {

enum class Isa { Scalar, Avx2 };

enum class Trans { No, Yes };

std::string_view isa_name(Isa isa);

/// Best instruction set this CPU supports.
Isa detected_isa();

/// Instruction set currently used by the float kernels.
Isa active_isa();

/// Throws std::invalid_argument if `isa` is not supported on this CPU.
void set_active_isa(Isa isa);

/// Row-major GEMM: C = alpha * op(A) * op(B) + beta * C, where op(A) is m x k
/// and op(B) is k x n. With beta == 0, C is overwritten and never read.
void gemm(Trans ta, Trans tb, int m, int n, int k, float alpha, const float* a, int lda,
          const float* b, int ldb, float beta, float* c, int ldc);

/// Double-precision GEMM. Always the scalar reference; used by gradient checks.
void gemm(Trans ta, Trans tb, int m, int n, int k, double alpha, const double* a, int lda,
          const double* b, int ldb, double beta, double* c, int ldc);

/// y = x >= 0 ? x : slope * x, in place allowed.
void leaky_relu(const float* x, float* y, std::size_t n, float slope);
void leaky_relu(const double* x, double* y, std::size_t n, double slope);

/// dx = dy * (y > 0 ? 1 : slope) where y is the forward output.
void leaky_relu_backward(const float* y, const float* dy, float* dx, std::size_t n, float slope);
void leaky_relu_backward(const double* y, const double* dy, double* dx, std::size_t n,
                         double slope);

struct AdamStep {
    float lr;
    float beta1;
    float beta2;
    float eps;
    float bias_correction1;  // 1 - beta1^t
    float bias_correction2;  // 1 - beta2^t
};

/// One Adam update over n parameters. m and v are the running moments.
void adam_update(float* w, const float* g, float* m, float* v, std::size_t n, const AdamStep& step);

// Direct entry points for equivalence tests and benchmarks.
namespace ref {
void gemm(Trans ta, Trans tb, int m, int n, int k, float alpha, const float* a, int lda,
          const float* b, int ldb, float beta, float* c, int ldc);
void leaky_relu(const float* x, float* y, std::size_t n, float slope);
void leaky_relu_backward(const float* y, const float* dy, float* dx, std::size_t n, float slope);
void adam_update(float* w, const float* g, float* m, float* v, std::size_t n, const AdamStep& step);
}  // namespace ref

namespace avx2 {
/// False when the library was built without AVX2 support.
bool compiled();
void gemm(Trans ta, Trans tb, int m, int n, int k, float alpha, const float* a, int lda,
          const float* b, int ldb, float beta, float* c, int ldc);
void leaky_relu(const float* x, float* y, std::size_t n, float slope);
void leaky_relu_backward(const float* y, const float* dy, float* dx, std::size_t n, float slope);
void adam_update(float* w, const float* g, float* m, float* v, std::size_t n, const AdamStep& step);
}  // namespace avx2

}  // namespace lumisplit::simd
