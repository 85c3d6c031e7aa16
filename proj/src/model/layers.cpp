#include <algorithm>
#include <cmath>

#include "lumisplit/model.hpp"
#include "lumisplit/simd/kernels.hpp"

namespace lumisplit::model {

using simd::Trans;

namespace {

template <class T>
void im2col(const Image<T>& x, const ConvSpec& s, int oh, int ow, T* cols) {
    const int pad = s.kernel / 2;
    const int H = x.height(), W = x.width();
    const std::size_t n = static_cast<std::size_t>(oh) * ow;
    for (int ci = 0; ci < s.in_channels; ++ci) {
        const T* src = x.plane(ci);
        for (int ky = 0; ky < s.kernel; ++ky) {
            for (int kx = 0; kx < s.kernel; ++kx) {
                T* row = cols + (static_cast<std::size_t>(ci) * s.kernel * s.kernel + ky * s.kernel + kx) * n;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * s.stride + ky - pad;
                    T* dst = row + static_cast<std::size_t>(oy) * ow;
                    if (iy < 0 || iy >= H) {
                        std::fill(dst, dst + ow, T(0));
                        continue;
                    }
                    const T* line = src + static_cast<std::size_t>(iy) * W;
                    if (s.stride == 1) {
                        const int shift = kx - pad;
                        const int lo = std::max(0, -shift);
                        const int hi = std::min(ow, W - shift);
                        for (int ox = 0; ox < lo; ++ox) dst[ox] = T(0);
                        for (int ox = lo; ox < hi; ++ox) dst[ox] = line[ox + shift];
                        for (int ox = std::max(hi, lo); ox < ow; ++ox) dst[ox] = T(0);
                    } else {
                        for (int ox = 0; ox < ow; ++ox) {
                            const int ix = ox * s.stride + kx - pad;
                            dst[ox] = (ix >= 0 && ix < W) ? line[ix] : T(0);
                        }
                    }
                }
            }
        }
    }
}

template <class T>
void col2im(const T* cols, const ConvSpec& s, int oh, int ow, Image<T>& dx) {
    const int pad = s.kernel / 2;
    const int H = dx.height(), W = dx.width();
    const std::size_t n = static_cast<std::size_t>(oh) * ow;
    for (int ci = 0; ci < s.in_channels; ++ci) {
        T* dst = dx.plane(ci);
        for (int ky = 0; ky < s.kernel; ++ky) {
            for (int kx = 0; kx < s.kernel; ++kx) {
                const T* row = cols + (static_cast<std::size_t>(ci) * s.kernel * s.kernel + ky * s.kernel + kx) * n;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * s.stride + ky - pad;
                    if (iy < 0 || iy >= H) continue;
                    const T* src = row + static_cast<std::size_t>(oy) * ow;
                    T* line = dst + static_cast<std::size_t>(iy) * W;
                    if (s.stride == 1) {
                        const int shift = kx - pad;
                        const int lo = std::max(0, -shift);
                        const int hi = std::min(ow, W - shift);
                        for (int ox = lo; ox < hi; ++ox) line[ox + shift] += src[ox];
                    } else {
                        for (int ox = 0; ox < ow; ++ox) {
                            const int ix = ox * s.stride + kx - pad;
                            if (ix >= 0 && ix < W) line[ix] += src[ox];
                        }
                    }
                }
            }
        }
    }
}

int out_size(int in, const ConvSpec& s) { return (in + 2 * (s.kernel / 2) - s.kernel) / s.stride + 1; }

}  // namespace

template <class T>
Conv2d<T>::Conv2d(std::string name, ConvSpec spec) : spec_(spec) {
    if (spec.in_channels <= 0 || spec.out_channels <= 0 || spec.kernel <= 0 || spec.kernel % 2 == 0 || spec.stride <= 0)
        throw InvalidArgument("Conv2d '" + name + "': invalid spec");
    const std::size_t k = static_cast<std::size_t>(spec.in_channels) * spec.kernel * spec.kernel;
    weight_.name = name + ".weight";
    weight_.shape = {spec.out_channels, spec.in_channels, spec.kernel, spec.kernel};
    weight_.value.assign(k * spec.out_channels, T(0));
    weight_.grad.assign(weight_.value.size(), T(0));
    bias_.name = name + ".bias";
    bias_.shape = {spec.out_channels};
    bias_.value.assign(static_cast<std::size_t>(spec.out_channels), T(0));
    bias_.grad.assign(bias_.value.size(), T(0));
}

template <class T>
void Conv2d<T>::init(std::mt19937_64& rng) {
    const double fan_in = static_cast<double>(spec_.in_channels) * spec_.kernel * spec_.kernel;
    const double gain2 = 2.0 / (1.0 + static_cast<double>(kLeakySlope) * kLeakySlope);
    const double bound = std::sqrt(3.0 * gain2 / fan_in);
    std::uniform_real_distribution<double> u(-bound, bound);
    for (auto& w : weight_.value) w = static_cast<T>(u(rng));
    std::fill(bias_.value.begin(), bias_.value.end(), T(0));
}

template <class T>
Image<T> Conv2d<T>::forward(const Image<T>& x, ConvCache<T>* cache) const {
    if (x.channels() != spec_.in_channels)
        throw ShapeError(weight_.name + ": expected " + std::to_string(spec_.in_channels) + " input channels, got " +
                         std::to_string(x.channels()));
    const int oh = out_size(x.height(), spec_);
    const int ow = out_size(x.width(), spec_);
    const int n = oh * ow;
    const int k = spec_.in_channels * spec_.kernel * spec_.kernel;
    ScratchBuffer<T> cols(static_cast<std::size_t>(k) * n);
    im2col(x, spec_, oh, ow, cols.data());
    Image<T> y(spec_.out_channels, oh, ow);
    simd::gemm(Trans::No, Trans::No, spec_.out_channels, n, k, T(1), weight_.value.data(), k, cols.data(), n, T(0),
               y.data(), n);
    for (int o = 0; o < spec_.out_channels; ++o) {
        T* p = y.plane(o);
        const T b = bias_.value[static_cast<std::size_t>(o)];
        for (int i = 0; i < n; ++i) p[i] += b;
    }
    if (cache) {
        cache->columns = std::move(cols);
        cache->in_height = x.height();
        cache->in_width = x.width();
    }
    return y;
}

template <class T>
Image<T> Conv2d<T>::backward(const Image<T>& dy, const ConvCache<T>& cache, bool need_input_grad) {
    const int oh = dy.height();
    const int ow = dy.width();
    const int n = oh * ow;
    const int k = spec_.in_channels * spec_.kernel * spec_.kernel;
    if (dy.channels() != spec_.out_channels || cache.columns.size() != static_cast<std::size_t>(k) * n)
        throw ShapeError(weight_.name + ": backward shape mismatch");
    simd::gemm(Trans::No, Trans::Yes, spec_.out_channels, k, n, T(1), dy.data(), n, cache.columns.data(), n, T(1),
               weight_.grad.data(), k);
    for (int o = 0; o < spec_.out_channels; ++o) {
        const T* p = dy.plane(o);
        T s = T(0);
        for (int i = 0; i < n; ++i) s += p[i];
        bias_.grad[static_cast<std::size_t>(o)] += s;
    }
    if (!need_input_grad) return {};
    ScratchBuffer<T> dcols(static_cast<std::size_t>(k) * n);
    simd::gemm(Trans::Yes, Trans::No, k, n, spec_.out_channels, T(1), weight_.value.data(), k, dy.data(), n, T(0),
               dcols.data(), n);
    Image<T> dx(spec_.in_channels, cache.in_height, cache.in_width);
    col2im(dcols.data(), spec_, oh, ow, dx);
    return dx;
}

template class Conv2d<float>;
template class Conv2d<double>;

// ---- attention ------------------------------------------------------------

template <class T>
Matrix<T> to_tokens(const Image<T>& f) {
    const int n = static_cast<int>(f.plane_size());
    Matrix<T> m(n, f.channels());
    for (int c = 0; c < f.channels(); ++c) {
        const T* p = f.plane(c);
        for (int i = 0; i < n; ++i) m.at(i, c) = p[i];
    }
    return m;
}

template <class T>
Image<T> from_tokens(const Matrix<T>& m, int height, int width) {
    if (m.rows != height * width) throw ShapeError("from_tokens: token count does not match spatial size");
    Image<T> f(m.cols, height, width);
    for (int c = 0; c < m.cols; ++c) {
        T* p = f.plane(c);
        for (int i = 0; i < m.rows; ++i) p[i] = m.at(i, c);
    }
    return f;
}

template <class T>
Matrix<T> attention(const Matrix<T>& q, const Matrix<T>& k, const Matrix<T>& v, bool scaled, AttentionCache<T>* cache) {
    if (q.cols != k.cols || k.rows != v.rows || q.cols != v.cols)
        throw ShapeError("attention: dimension mismatch (Q " + std::to_string(q.rows) + "x" + std::to_string(q.cols) +
                         ", K " + std::to_string(k.rows) + "x" + std::to_string(k.cols) + ", V " +
                         std::to_string(v.rows) + "x" + std::to_string(v.cols) + ")");
    const int n = q.rows, m = k.rows, c = q.cols;
    const T s = scaled ? T(1) / std::sqrt(static_cast<T>(c)) : T(1);
    Matrix<T> probs(n, m);
    simd::gemm(Trans::No, Trans::Yes, n, m, c, s, q.data.data(), c, k.data.data(), c, T(0), probs.data.data(), m);
    for (int i = 0; i < n; ++i) {
        T* row = probs.data.data() + static_cast<std::size_t>(i) * m;
        const T mx = *std::max_element(row, row + m);
        T sum = T(0);
        for (int j = 0; j < m; ++j) {
            row[j] = std::exp(row[j] - mx);
            sum += row[j];
        }
        for (int j = 0; j < m; ++j) row[j] /= sum;
    }
    Matrix<T> out(n, c);
    simd::gemm(Trans::No, Trans::No, n, c, m, T(1), probs.data.data(), m, v.data.data(), c, T(0), out.data.data(), c);
    if (cache) cache->probs = std::move(probs);
    return out;
}

template <class T>
AttentionGrads<T> attention_backward(const Matrix<T>& q, const Matrix<T>& k, const Matrix<T>& v,
                                     const AttentionCache<T>& cache, const Matrix<T>& dout, bool scaled) {
    const int n = q.rows, m = k.rows, c = q.cols;
    const T s = scaled ? T(1) / std::sqrt(static_cast<T>(c)) : T(1);
    const Matrix<T>& p = cache.probs;
    AttentionGrads<T> g{Matrix<T>(n, c), Matrix<T>(m, c), Matrix<T>(m, c)};
    // dV = P^T dO
    simd::gemm(Trans::Yes, Trans::No, m, c, n, T(1), p.data.data(), m, dout.data.data(), c, T(0), g.dv.data.data(), c);
    // dP = dO V^T, then softmax backward in place
    Matrix<T> ds(n, m);
    simd::gemm(Trans::No, Trans::Yes, n, m, c, T(1), dout.data.data(), c, v.data.data(), c, T(0), ds.data.data(), m);
    for (int i = 0; i < n; ++i) {
        T dot = T(0);
        for (int j = 0; j < m; ++j) dot += ds.at(i, j) * p.at(i, j);
        for (int j = 0; j < m; ++j) ds.at(i, j) = p.at(i, j) * (ds.at(i, j) - dot);
    }
    simd::gemm(Trans::No, Trans::No, n, c, m, s, ds.data.data(), m, k.data.data(), c, T(0), g.dq.data.data(), c);
    simd::gemm(Trans::Yes, Trans::No, m, c, n, s, ds.data.data(), m, q.data.data(), c, T(0), g.dk.data.data(), c);
    return g;
}

template Matrix<float> to_tokens(const Image<float>&);
template Matrix<double> to_tokens(const Image<double>&);
template Image<float> from_tokens(const Matrix<float>&, int, int);
template Image<double> from_tokens(const Matrix<double>&, int, int);
template Matrix<float> attention(const Matrix<float>&, const Matrix<float>&, const Matrix<float>&, bool,
                                 AttentionCache<float>*);
template Matrix<double> attention(const Matrix<double>&, const Matrix<double>&, const Matrix<double>&, bool,
                                  AttentionCache<double>*);
template AttentionGrads<float> attention_backward(const Matrix<float>&, const Matrix<float>&, const Matrix<float>&,
                                                  const AttentionCache<float>&, const Matrix<float>&, bool);
template AttentionGrads<double> attention_backward(const Matrix<double>&, const Matrix<double>&,
                                                   const Matrix<double>&, const AttentionCache<double>&,
                                                   const Matrix<double>&, bool);

}  // namespace lumisplit::model
