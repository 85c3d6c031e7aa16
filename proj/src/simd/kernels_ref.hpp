#pragma once

#include <cmath>
#include <cstddef>

#include "lumisplit/simd/kernels.hpp"

namespace lumisplit::simd::detail {

template <class T>
void gemm_ref(Trans ta, Trans tb, int m, int n, int k, T alpha, const T* a, int lda, const T* b,
              int ldb, T beta, T* c, int ldc) {
    const bool at = ta == Trans::Yes;
    const bool bt = tb == Trans::Yes;
    for (int i = 0; i < m; ++i) {
        T* crow = c + static_cast<std::ptrdiff_t>(i) * ldc;
        if (beta == T(0)) {
            for (int j = 0; j < n; ++j) crow[j] = T(0);
        } else if (beta != T(1)) {
            for (int j = 0; j < n; ++j) crow[j] *= beta;
        }
        // i-p-j order keeps the innermost loop contiguous for the common NN case.
        for (int p = 0; p < k; ++p) {
            const T aip = at ? a[static_cast<std::ptrdiff_t>(p) * lda + i]
                             : a[static_cast<std::ptrdiff_t>(i) * lda + p];
            if (aip == T(0)) continue;
            const T s = alpha * aip;
            if (bt) {
                for (int j = 0; j < n; ++j) crow[j] += s * b[static_cast<std::ptrdiff_t>(j) * ldb + p];
            } else {
                const T* brow = b + static_cast<std::ptrdiff_t>(p) * ldb;
                for (int j = 0; j < n; ++j) crow[j] += s * brow[j];
            }
        }
    }
}

template <class T>
void leaky_relu_ref(const T* x, T* y, std::size_t n, T slope) {
    for (std::size_t i = 0; i < n; ++i) y[i] = x[i] >= T(0) ? x[i] : slope * x[i];
}

template <class T>
void leaky_relu_backward_ref(const T* y, const T* dy, T* dx, std::size_t n, T slope) {
    for (std::size_t i = 0; i < n; ++i) dx[i] = y[i] > T(0) ? dy[i] : slope * dy[i];
}

inline void adam_update_ref(float* w, const float* g, float* m, float* v, std::size_t n,
                            const AdamStep& s) {
    const float om1 = 1.0f - s.beta1;
    const float om2 = 1.0f - s.beta2;
    for (std::size_t i = 0; i < n; ++i) {
        m[i] = s.beta1 * m[i] + om1 * g[i];
        v[i] = s.beta2 * v[i] + om2 * (g[i] * g[i]);
        const float mhat = m[i] / s.bias_correction1;
        const float vhat = v[i] / s.bias_correction2;
        w[i] -= s.lr * mhat / (std::sqrt(vhat) + s.eps);
    }
}

}  // namespace lumisplit::simd::detail
