// AVX2/FMA kernels. This translation unit is compiled with -mavx2 -mfma and
// must only be entered after the dispatcher confirmed CPU support, so it
// keeps to raw pointers and intrinsics (no shared template instantiations).

#include "lumisplit/simd/kernels.hpp"

#if defined(LUMISPLIT_HAVE_AVX2)

#include <immintrin.h>

#include <algorithm>
#include <cstdint>

namespace lumisplit::simd::avx2 {

namespace {

constexpr int kMr = 6;
constexpr int kNr = 16;
constexpr int kMc = 96;
constexpr int kKc = 256;
constexpr int kNc = 1024;

alignas(64) thread_local float g_pack_a[kMc * kKc];
alignas(64) thread_local float g_pack_b[kKc * kNc];

inline float element(const float* x, int ld, bool transposed, int row, int col) {
    return transposed ? x[static_cast<std::ptrdiff_t>(col) * ld + row]
                      : x[static_cast<std::ptrdiff_t>(row) * ld + col];
}

// Packs rows [i0, i0+mc) x cols [p0, p0+kc) of op(A) into kMr-row strips,
// column-major within a strip, zero padded to a multiple of kMr rows.
void pack_a(bool at, const float* a, int lda, int i0, int mc, int p0, int kc, float* dst) {
    for (int ir = 0; ir < mc; ir += kMr) {
        const int mr = std::min(kMr, mc - ir);
        if (at) {
            // op(A)(i, p) = a[p * lda + i]: rows of a strip are contiguous.
            for (int p = 0; p < kc; ++p) {
                const float* src = a + static_cast<std::ptrdiff_t>(p0 + p) * lda + i0 + ir;
                int r = 0;
                for (; r < mr; ++r) dst[r] = src[r];
                for (; r < kMr; ++r) dst[r] = 0.0f;
                dst += kMr;
            }
        } else {
            for (int p = 0; p < kc; ++p) {
                int r = 0;
                for (; r < mr; ++r) dst[r] = element(a, lda, false, i0 + ir + r, p0 + p);
                for (; r < kMr; ++r) dst[r] = 0.0f;
                dst += kMr;
            }
        }
    }
}

// Packs rows [p0, p0+kc) x cols [j0, j0+nc) of op(B) into kNr-column panels.
void pack_b(bool bt, const float* b, int ldb, int p0, int kc, int j0, int nc, float* dst) {
    for (int jr = 0; jr < nc; jr += kNr) {
        const int nr = std::min(kNr, nc - jr);
        if (!bt && nr == kNr) {
            for (int p = 0; p < kc; ++p) {
                const float* src = b + static_cast<std::ptrdiff_t>(p0 + p) * ldb + j0 + jr;
                _mm256_store_ps(dst, _mm256_loadu_ps(src));
                _mm256_store_ps(dst + 8, _mm256_loadu_ps(src + 8));
                dst += kNr;
            }
        } else if (bt) {
            // op(B)(p, j) = b[j * ldb + p]: read each source row contiguously.
            for (int col = 0; col < nr; ++col) {
                const float* src = b + static_cast<std::ptrdiff_t>(j0 + jr + col) * ldb + p0;
                for (int p = 0; p < kc; ++p) dst[p * kNr + col] = src[p];
            }
            for (int col = nr; col < kNr; ++col)
                for (int p = 0; p < kc; ++p) dst[p * kNr + col] = 0.0f;
            dst += kc * kNr;
        } else {
            for (int p = 0; p < kc; ++p) {
                int col = 0;
                for (; col < nr; ++col) dst[col] = element(b, ldb, false, p0 + p, j0 + jr + col);
                for (; col < kNr; ++col) dst[col] = 0.0f;
                dst += kNr;
            }
        }
    }
}

// C[mr x nr] += alpha * Apanel * Bpanel over kc.
void micro_kernel(int kc, const float* ap, const float* bp, float alpha, float* c, int ldc, int mr,
                  int nr) {
    __m256 c00 = _mm256_setzero_ps(), c01 = _mm256_setzero_ps();
    __m256 c10 = _mm256_setzero_ps(), c11 = _mm256_setzero_ps();
    __m256 c20 = _mm256_setzero_ps(), c21 = _mm256_setzero_ps();
    __m256 c30 = _mm256_setzero_ps(), c31 = _mm256_setzero_ps();
    __m256 c40 = _mm256_setzero_ps(), c41 = _mm256_setzero_ps();
    __m256 c50 = _mm256_setzero_ps(), c51 = _mm256_setzero_ps();

    for (int p = 0; p < kc; ++p) {
        const __m256 b0 = _mm256_load_ps(bp);
        const __m256 b1 = _mm256_load_ps(bp + 8);
        __m256 a = _mm256_broadcast_ss(ap + 0);
        c00 = _mm256_fmadd_ps(a, b0, c00);
        c01 = _mm256_fmadd_ps(a, b1, c01);
        a = _mm256_broadcast_ss(ap + 1);
        c10 = _mm256_fmadd_ps(a, b0, c10);
        c11 = _mm256_fmadd_ps(a, b1, c11);
        a = _mm256_broadcast_ss(ap + 2);
        c20 = _mm256_fmadd_ps(a, b0, c20);
        c21 = _mm256_fmadd_ps(a, b1, c21);
        a = _mm256_broadcast_ss(ap + 3);
        c30 = _mm256_fmadd_ps(a, b0, c30);
        c31 = _mm256_fmadd_ps(a, b1, c31);
        a = _mm256_broadcast_ss(ap + 4);
        c40 = _mm256_fmadd_ps(a, b0, c40);
        c41 = _mm256_fmadd_ps(a, b1, c41);
        a = _mm256_broadcast_ss(ap + 5);
        c50 = _mm256_fmadd_ps(a, b0, c50);
        c51 = _mm256_fmadd_ps(a, b1, c51);
        ap += kMr;
        bp += kNr;
    }

    const __m256 va = _mm256_set1_ps(alpha);
    alignas(32) float tile[kMr][kNr];
    _mm256_store_ps(tile[0], _mm256_mul_ps(va, c00));
    _mm256_store_ps(tile[0] + 8, _mm256_mul_ps(va, c01));
    _mm256_store_ps(tile[1], _mm256_mul_ps(va, c10));
    _mm256_store_ps(tile[1] + 8, _mm256_mul_ps(va, c11));
    _mm256_store_ps(tile[2], _mm256_mul_ps(va, c20));
    _mm256_store_ps(tile[2] + 8, _mm256_mul_ps(va, c21));
    _mm256_store_ps(tile[3], _mm256_mul_ps(va, c30));
    _mm256_store_ps(tile[3] + 8, _mm256_mul_ps(va, c31));
    _mm256_store_ps(tile[4], _mm256_mul_ps(va, c40));
    _mm256_store_ps(tile[4] + 8, _mm256_mul_ps(va, c41));
    _mm256_store_ps(tile[5], _mm256_mul_ps(va, c50));
    _mm256_store_ps(tile[5] + 8, _mm256_mul_ps(va, c51));

    if (nr == kNr) {
        for (int r = 0; r < mr; ++r) {
            float* crow = c + static_cast<std::ptrdiff_t>(r) * ldc;
            _mm256_storeu_ps(crow, _mm256_add_ps(_mm256_loadu_ps(crow), _mm256_load_ps(tile[r])));
            _mm256_storeu_ps(crow + 8,
                             _mm256_add_ps(_mm256_loadu_ps(crow + 8), _mm256_load_ps(tile[r] + 8)));
        }
    } else {
        for (int r = 0; r < mr; ++r) {
            float* crow = c + static_cast<std::ptrdiff_t>(r) * ldc;
            for (int col = 0; col < nr; ++col) crow[col] += tile[r][col];
        }
    }
}

void scale_c(int m, int n, float beta, float* c, int ldc) {
    const __m256 vb = _mm256_set1_ps(beta);
    for (int i = 0; i < m; ++i) {
        float* row = c + static_cast<std::ptrdiff_t>(i) * ldc;
        int j = 0;
        if (beta == 0.0f) {
            for (; j + 8 <= n; j += 8) _mm256_storeu_ps(row + j, _mm256_setzero_ps());
            for (; j < n; ++j) row[j] = 0.0f;
        } else {
            for (; j + 8 <= n; j += 8) _mm256_storeu_ps(row + j, _mm256_mul_ps(vb, _mm256_loadu_ps(row + j)));
            for (; j < n; ++j) row[j] *= beta;
        }
    }
}

}  // namespace

bool compiled() { return true; }

void gemm(Trans ta, Trans tb, int m, int n, int k, float alpha, const float* a, int lda,
          const float* b, int ldb, float beta, float* c, int ldc) {
    if (m <= 0 || n <= 0) return;
    if (beta != 1.0f) scale_c(m, n, beta, c, ldc);
    if (k <= 0 || alpha == 0.0f) return;

    const bool at = ta == Trans::Yes;
    const bool bt = tb == Trans::Yes;
    for (int jc = 0; jc < n; jc += kNc) {
        const int nc = std::min(kNc, n - jc);
        for (int pc = 0; pc < k; pc += kKc) {
            const int kc = std::min(kKc, k - pc);
            pack_b(bt, b, ldb, pc, kc, jc, nc, g_pack_b);
            for (int ic = 0; ic < m; ic += kMc) {
                const int mc = std::min(kMc, m - ic);
                pack_a(at, a, lda, ic, mc, pc, kc, g_pack_a);
                for (int jr = 0; jr < nc; jr += kNr) {
                    const int nr = std::min(kNr, nc - jr);
                    const float* bp = g_pack_b + static_cast<std::ptrdiff_t>(jr) * kc;
                    for (int ir = 0; ir < mc; ir += kMr) {
                        const int mr = std::min(kMr, mc - ir);
                        const float* ap = g_pack_a + static_cast<std::ptrdiff_t>(ir) * kc;
                        float* cp = c + static_cast<std::ptrdiff_t>(ic + ir) * ldc + jc + jr;
                        micro_kernel(kc, ap, bp, alpha, cp, ldc, mr, nr);
                    }
                }
            }
        }
    }
}

void leaky_relu(const float* x, float* y, std::size_t n, float slope) {
    const __m256 zero = _mm256_setzero_ps();
    const __m256 vs = _mm256_set1_ps(slope);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256 v = _mm256_loadu_ps(x + i);
        const __m256 neg = _mm256_cmp_ps(v, zero, _CMP_LT_OQ);
        _mm256_storeu_ps(y + i, _mm256_blendv_ps(v, _mm256_mul_ps(vs, v), neg));
    }
    for (; i < n; ++i) y[i] = x[i] >= 0.0f ? x[i] : slope * x[i];
}

void leaky_relu_backward(const float* y, const float* dy, float* dx, std::size_t n, float slope) {
    const __m256 zero = _mm256_setzero_ps();
    const __m256 vs = _mm256_set1_ps(slope);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256 g = _mm256_loadu_ps(dy + i);
        const __m256 pos = _mm256_cmp_ps(_mm256_loadu_ps(y + i), zero, _CMP_GT_OQ);
        _mm256_storeu_ps(dx + i, _mm256_blendv_ps(_mm256_mul_ps(vs, g), g, pos));
    }
    for (; i < n; ++i) dx[i] = y[i] > 0.0f ? dy[i] : slope * dy[i];
}

void adam_update(float* w, const float* g, float* m, float* v, std::size_t n, const AdamStep& s) {
    const __m256 b1 = _mm256_set1_ps(s.beta1);
    const __m256 b2 = _mm256_set1_ps(s.beta2);
    const __m256 om1 = _mm256_set1_ps(1.0f - s.beta1);
    const __m256 om2 = _mm256_set1_ps(1.0f - s.beta2);
    const __m256 bc1 = _mm256_set1_ps(s.bias_correction1);
    const __m256 bc2 = _mm256_set1_ps(s.bias_correction2);
    const __m256 lr = _mm256_set1_ps(s.lr);
    const __m256 eps = _mm256_set1_ps(s.eps);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256 gv = _mm256_loadu_ps(g + i);
        const __m256 mv = _mm256_add_ps(_mm256_mul_ps(b1, _mm256_loadu_ps(m + i)), _mm256_mul_ps(om1, gv));
        const __m256 vv = _mm256_add_ps(_mm256_mul_ps(b2, _mm256_loadu_ps(v + i)),
                                        _mm256_mul_ps(om2, _mm256_mul_ps(gv, gv)));
        _mm256_storeu_ps(m + i, mv);
        _mm256_storeu_ps(v + i, vv);
        const __m256 mhat = _mm256_div_ps(mv, bc1);
        const __m256 vhat = _mm256_div_ps(vv, bc2);
        const __m256 upd = _mm256_div_ps(_mm256_mul_ps(lr, mhat), _mm256_add_ps(_mm256_sqrt_ps(vhat), eps));
        _mm256_storeu_ps(w + i, _mm256_sub_ps(_mm256_loadu_ps(w + i), upd));
    }
    if (i < n) ref::adam_update(w + i, g + i, m + i, v + i, n - i, s);
}

}  // namespace lumisplit::simd::avx2

#else

#include <stdexcept>

namespace lumisplit::simd::avx2 {

bool compiled() { return false; }

void gemm(Trans, Trans, int, int, int, float, const float*, int, const float*, int, float, float*, int) {
    throw std::logic_error("AVX2 kernels not compiled in");
}
void leaky_relu(const float*, float*, std::size_t, float) {
    throw std::logic_error("AVX2 kernels not compiled in");
}
void leaky_relu_backward(const float*, const float*, float*, std::size_t, float) {
    throw std::logic_error("AVX2 kernels not compiled in");
}
void adam_update(float*, const float*, float*, float*, std::size_t, const AdamStep&) {
    throw std::logic_error("AVX2 kernels not compiled in");
}

}  // namespace lumisplit::simd::avx2

#endif
