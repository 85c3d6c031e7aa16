#include <algorithm>
#include <cmath>

#include "lumisplit/model.hpp"
#include "lumisplit/simd/kernels.hpp"

namespace lumisplit::model {

void NetworkConfig::validate() const {
    if (base_channels < 1 || base_channels > 512) throw InvalidArgument("base_channels must be in [1, 512]");
    if (depth < 1 || depth > 6) throw InvalidArgument("depth must be in [1, 6]");
    if (!(l_max > kIlluminationFloor) || !std::isfinite(l_max)) throw InvalidArgument("l_max must exceed 1e-4");
}

void NetworkConfig::check_input_size(int height, int width) const {
    const int m = 1 << depth;
    if (height <= 0 || width <= 0 || height % m != 0 || width % m != 0)
        throw InvalidArgument("input size " + std::to_string(height) + "x" + std::to_string(width) +
                              " must be divisible by " + std::to_string(m));
}

namespace {

template <class T>
void activate(Image<T>& x) {
    simd::leaky_relu(x.data(), x.data(), x.size(), static_cast<T>(kLeakySlope));
}

template <class T>
Image<T> activate_backward(const Image<T>& y, const Image<T>& dy) {
    Image<T> dx(y.channels(), y.height(), y.width());
    simd::leaky_relu_backward(y.data(), dy.data(), dx.data(), y.size(), static_cast<T>(kLeakySlope));
    return dx;
}

template <class T>
Image<T> upsample2(const Image<T>& x) {
    Image<T> y(x.channels(), x.height() * 2, x.width() * 2);
    for (int c = 0; c < x.channels(); ++c)
        for (int yy = 0; yy < y.height(); ++yy)
            for (int xx = 0; xx < y.width(); ++xx) y.at(c, yy, xx) = x.at(c, yy / 2, xx / 2);
    return y;
}

template <class T>
Image<T> upsample2_backward(const Image<T>& dy) {
    Image<T> dx(dy.channels(), dy.height() / 2, dy.width() / 2);
    for (int c = 0; c < dy.channels(); ++c)
        for (int yy = 0; yy < dy.height(); ++yy)
            for (int xx = 0; xx < dy.width(); ++xx) dx.at(c, yy / 2, xx / 2) += dy.at(c, yy, xx);
    return dx;
}

template <class T>
Image<T> concat(const Image<T>& a, const Image<T>& b) {
    Image<T> out(a.channels() + b.channels(), a.height(), a.width());
    std::copy(a.data(), a.data() + a.size(), out.data());
    std::copy(b.data(), b.data() + b.size(), out.data() + a.size());
    return out;
}

template <class T>
std::pair<Image<T>, Image<T>> split(const Image<T>& x, int first) {
    Image<T> a(first, x.height(), x.width());
    Image<T> b(x.channels() - first, x.height(), x.width());
    std::copy(x.data(), x.data() + a.size(), a.data());
    std::copy(x.data() + a.size(), x.data() + x.size(), b.data());
    return {std::move(a), std::move(b)};
}

template <class T>
void add_into(Image<T>& dst, const Image<T>& src) {
    T* d = dst.data();
    const T* s = src.data();
    for (std::size_t i = 0; i < dst.size(); ++i) d[i] += s[i];
}

template <class T>
void add_into(Matrix<T>& dst, const Matrix<T>& src) {
    for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
}

template <class T>
T sigmoid(T z) {
    return z >= T(0) ? T(1) / (T(1) + std::exp(-z)) : std::exp(z) / (T(1) + std::exp(z));
}

template <class T>
ConvRecord<T> run_conv(const Conv2d<T>& conv, const Image<T>& x, bool act) {
    ConvRecord<T> r;
    r.out = conv.forward(x, &r.cache);
    if (act) activate(r.out);
    return r;
}

}  // namespace

template <class T>
DecompositionNet<T>::DecompositionNet(NetworkConfig config, std::uint64_t seed) : config_(config) {
    config_.validate();
    const int b = config_.base_channels;
    const int d = config_.depth;
    encoder_.emplace_back("enc0.conv_a", ConvSpec{3, b, 3, 1});
    encoder_.emplace_back("enc0.conv_b", ConvSpec{b, b, 3, 1});
    for (int l = 1; l <= d; ++l) {
        const std::string p = "enc" + std::to_string(l);
        encoder_.emplace_back(p + ".down", ConvSpec{channels_at(l - 1), channels_at(l), 3, 2});
        encoder_.emplace_back(p + ".conv", ConvSpec{channels_at(l), channels_at(l), 3, 1});
    }
    const int cd = channels_at(d);
    // Each fusion conv maps [own, other] to the own half, shared by both frames.
    fuse1_ = Conv2d<T>("cfim.fuse1", ConvSpec{2 * cd, cd, 3, 1});
    fuse2_ = Conv2d<T>("cfim.fuse2", ConvSpec{2 * cd, cd, 3, 1});
    for (int l = 1; l <= d; ++l) {
        const std::string p = "dec" + std::to_string(l - 1);
        up_.emplace_back(p + ".up", ConvSpec{channels_at(l), channels_at(l - 1), 3, 1});
        merge_.emplace_back(p + ".merge", ConvSpec{2 * channels_at(l - 1), channels_at(l - 1), 3, 1});
    }
    head_ = Conv2d<T>("head", ConvSpec{b, 6, 3, 1});

    std::mt19937_64 rng(seed);
    for (auto& c : encoder_) c.init(rng);
    fuse1_.init(rng);
    fuse2_.init(rng);
    for (std::size_t i = 0; i < up_.size(); ++i) {
        up_[i].init(rng);
        merge_[i].init(rng);
    }
    head_.init(rng);
    // Start near L = 1, R = 0.5 so that L * R begins at mid-gray.
    const T l_bias = static_cast<T>(std::log(0.25 / 0.75));
    for (int c = 0; c < 3; ++c) head_.bias().value[static_cast<std::size_t>(c)] = l_bias;
}

template <class T>
void DecompositionNet<T>::run_encoder(const Image<T>& x, BranchTrace<T>& trace) const {
    trace.encoder.clear();
    const Image<T>* in = &x;
    for (const auto& conv : encoder_) {
        trace.encoder.push_back(run_conv(conv, *in, true));
        in = &trace.encoder.back().out;
    }
}

template <class T>
void DecompositionNet<T>::run_decoder(const Image<T>& deepest, BranchTrace<T>& trace, Decomposition<T>& out) const {
    const int d = config_.depth;
    trace.up.assign(static_cast<std::size_t>(d), {});
    trace.merge.assign(static_cast<std::size_t>(d), {});
    const Image<T>* h = &deepest;
    for (int l = d; l >= 1; --l) {
        auto& up = trace.up[static_cast<std::size_t>(l - 1)];
        up = run_conv(up_[static_cast<std::size_t>(l - 1)], upsample2(*h), true);
        const Image<T> cat = concat(up.out, trace.encoder[static_cast<std::size_t>(2 * (l - 1) + 1)].out);
        auto& merge = trace.merge[static_cast<std::size_t>(l - 1)];
        merge = run_conv(merge_[static_cast<std::size_t>(l - 1)], cat, true);
        h = &merge.out;
    }
    trace.head = run_conv(head_, *h, false);
    const Image<T>& z = trace.head.out;
    const int H = z.height(), W = z.width();
    out.illumination = Image<T>(3, H, W);
    out.reflectance = Image<T>(3, H, W);
    const T floor = static_cast<T>(kIlluminationFloor);
    const T span = static_cast<T>(config_.l_max) - floor;
    const std::size_t n = z.plane_size();
    for (int c = 0; c < 3; ++c) {
        const T* zl = z.plane(c);
        const T* zr = z.plane(c + 3);
        T* L = out.illumination.plane(c);
        T* R = out.reflectance.plane(c);
        for (std::size_t i = 0; i < n; ++i) {
            L[i] = floor + span * sigmoid(zl[i]);
            R[i] = sigmoid(zr[i]);
        }
    }
}

template <class T>
std::pair<Image<T>, Image<T>> DecompositionNet<T>::run_cfim(const Image<T>& f1, const Image<T>& f2,
                                                            CfimTrace<T>& tr) const {
    require_same_shape(f1, f2, "cfim");
    const int C = f1.channels(), H = f1.height(), W = f1.width();
    const bool sc = config_.attention_scaled;
    tr.tokens1 = to_tokens(f1);
    tr.tokens2 = to_tokens(f2);
    Image<T> s1 = f1;
    Image<T> s2 = f2;
    if (paths_.self_path) {
        add_into(s1, from_tokens(attention(tr.tokens1, tr.tokens1, tr.tokens1, sc, &tr.self1), H, W));
        add_into(s2, from_tokens(attention(tr.tokens2, tr.tokens2, tr.tokens2, sc, &tr.self2), H, W));
    }
    if (paths_.cross_path) {
        add_into(s1, from_tokens(attention(tr.tokens1, tr.tokens2, tr.tokens2, sc, &tr.cross1), H, W));
        add_into(s2, from_tokens(attention(tr.tokens2, tr.tokens1, tr.tokens1, sc, &tr.cross2), H, W));
    }
    tr.fuse1[0] = run_conv(fuse1_, concat(s1, s2), true);
    tr.fuse1[1] = run_conv(fuse1_, concat(s2, s1), true);
    tr.fuse2[0] = run_conv(fuse2_, concat(tr.fuse1[0].out, tr.fuse1[1].out), false);
    tr.fuse2[1] = run_conv(fuse2_, concat(tr.fuse1[1].out, tr.fuse1[0].out), false);
    tr.fused = concat(tr.fuse2[0].out, tr.fuse2[1].out);
    const Image<T>& y = tr.fused;
    const std::size_t P = y.plane_size();
    tr.gate.assign(static_cast<std::size_t>(y.channels()), T(0));
    Image<T> gated(y.channels(), H, W);
    for (int c = 0; c < y.channels(); ++c) {
        const T* p = y.plane(c);
        T mean = T(0);
        for (std::size_t i = 0; i < P; ++i) mean += p[i];
        mean /= static_cast<T>(P);
        const T g = sigmoid(mean);
        tr.gate[static_cast<std::size_t>(c)] = g;
        T* o = gated.plane(c);
        for (std::size_t i = 0; i < P; ++i) o[i] = p[i] * g;
    }
    return split(gated, C);
}

template <class T>
std::pair<Image<T>, Image<T>> DecompositionNet<T>::backward_cfim(const CfimTrace<T>& tr, const Image<T>& d1,
                                                                 const Image<T>& d2) {
    const int C = d1.channels(), H = d1.height(), W = d1.width();
    const bool sc = config_.attention_scaled;
    const Image<T> dout = concat(d1, d2);
    const Image<T>& y = tr.fused;
    const std::size_t P = y.plane_size();
    Image<T> dy(y.channels(), H, W);
    for (int c = 0; c < y.channels(); ++c) {
        const T g = tr.gate[static_cast<std::size_t>(c)];
        const T* yo = y.plane(c);
        const T* go = dout.plane(c);
        T dot = T(0);
        for (std::size_t i = 0; i < P; ++i) dot += go[i] * yo[i];
        const T dmean = dot * g * (T(1) - g) / static_cast<T>(P);
        T* o = dy.plane(c);
        for (std::size_t i = 0; i < P; ++i) o[i] = go[i] * g + dmean;
    }
    const auto [dy1, dy2] = split(dy, C);
    auto [dh1, dh2] = split(fuse2_.backward(dy1, tr.fuse2[0].cache, true), C);
    {
        const auto [b2, b1] = split(fuse2_.backward(dy2, tr.fuse2[1].cache, true), C);
        add_into(dh1, b1);
        add_into(dh2, b2);
    }
    auto [ds1, ds2] = split(fuse1_.backward(activate_backward(tr.fuse1[0].out, dh1), tr.fuse1[0].cache, true), C);
    {
        const auto [b2, b1] = split(fuse1_.backward(activate_backward(tr.fuse1[1].out, dh2), tr.fuse1[1].cache, true), C);
        add_into(ds1, b1);
        add_into(ds2, b2);
    }

    const Matrix<T> g1 = to_tokens(ds1);
    const Matrix<T> g2 = to_tokens(ds2);
    Matrix<T> dt1(g1.rows, C), dt2(g2.rows, C);
    const Matrix<T>& t1 = tr.tokens1;
    const Matrix<T>& t2 = tr.tokens2;
    if (paths_.self_path) {
        auto a = attention_backward(t1, t1, t1, tr.self1, g1, sc);
        add_into(dt1, a.dq);
        add_into(dt1, a.dk);
        add_into(dt1, a.dv);
        auto b = attention_backward(t2, t2, t2, tr.self2, g2, sc);
        add_into(dt2, b.dq);
        add_into(dt2, b.dk);
        add_into(dt2, b.dv);
    }
    if (paths_.cross_path) {
        auto a = attention_backward(t1, t2, t2, tr.cross1, g1, sc);
        add_into(dt1, a.dq);
        add_into(dt2, a.dk);
        add_into(dt2, a.dv);
        auto b = attention_backward(t2, t1, t1, tr.cross2, g2, sc);
        add_into(dt2, b.dq);
        add_into(dt1, b.dk);
        add_into(dt1, b.dv);
    }
    add_into(ds1, from_tokens(dt1, H, W));
    add_into(ds2, from_tokens(dt2, H, W));
    return {std::move(ds1), std::move(ds2)};
}

template <class T>
Image<T> DecompositionNet<T>::backward_decoder(const BranchTrace<T>& tr, const Decomposition<T>& out,
                                               const Decomposition<T>& grad, std::vector<Image<T>>& skip_grads) {
    require_same_shape(out.illumination, grad.illumination, "backward");
    require_same_shape(out.reflectance, grad.reflectance, "backward");
    const Image<T>& z = tr.head.out;
    Image<T> dz(6, z.height(), z.width());
    const T floor = static_cast<T>(kIlluminationFloor);
    const T span = static_cast<T>(config_.l_max) - floor;
    const std::size_t n = z.plane_size();
    for (int c = 0; c < 3; ++c) {
        const T* L = out.illumination.plane(c);
        const T* R = out.reflectance.plane(c);
        const T* gL = grad.illumination.plane(c);
        const T* gR = grad.reflectance.plane(c);
        T* dl = dz.plane(c);
        T* dr = dz.plane(c + 3);
        for (std::size_t i = 0; i < n; ++i) {
            const T s = (L[i] - floor) / span;
            dl[i] = gL[i] * (L[i] - floor) * (T(1) - s);
            dr[i] = gR[i] * R[i] * (T(1) - R[i]);
        }
    }
    Image<T> dh = head_.backward(dz, tr.head.cache, true);
    for (int l = 1; l <= config_.depth; ++l) {
        const auto i = static_cast<std::size_t>(l - 1);
        const Image<T> dcat = merge_[i].backward(activate_backward(tr.merge[i].out, dh), tr.merge[i].cache, true);
        auto [dup, dskip] = split(dcat, channels_at(l - 1));
        add_into(skip_grads[i], dskip);
        dh = upsample2_backward(up_[i].backward(activate_backward(tr.up[i].out, dup), tr.up[i].cache, true));
    }
    return dh;
}

template <class T>
void DecompositionNet<T>::backward_encoder(const BranchTrace<T>& tr, const Image<T>& deepest_grad,
                                           std::vector<Image<T>>& skip_grads) {
    Image<T> g = deepest_grad;
    for (int l = config_.depth; l >= 0; --l) {
        if (l < config_.depth) add_into(g, skip_grads[static_cast<std::size_t>(l)]);
        const auto b = static_cast<std::size_t>(2 * l + 1);
        const auto a = static_cast<std::size_t>(2 * l);
        g = encoder_[b].backward(activate_backward(tr.encoder[b].out, g), tr.encoder[b].cache, true);
        g = encoder_[a].backward(activate_backward(tr.encoder[a].out, g), tr.encoder[a].cache, l > 0);
    }
}

template <class T>
DualTrace<T> DecompositionNet<T>::forward_dual_trace(const Image<T>& frame1, const Image<T>& frame2) const {
    require_same_shape(frame1, frame2, "forward_dual");
    if (frame1.channels() != 3) throw ShapeError("forward_dual: expected 3-channel frames, got " + frame1.shape_string());
    config_.check_input_size(frame1.height(), frame1.width());
    DualTrace<T> tr;
    run_encoder(frame1, tr.branch[0]);
    run_encoder(frame2, tr.branch[1]);
    const Image<T>& e1 = tr.branch[0].encoder.back().out;
    const Image<T>& e2 = tr.branch[1].encoder.back().out;
    if (config_.use_cfim) {
        auto [h1, h2] = run_cfim(e1, e2, tr.cfim);
        run_decoder(h1, tr.branch[0], tr.out[0]);
        run_decoder(h2, tr.branch[1], tr.out[1]);
    } else {
        run_decoder(e1, tr.branch[0], tr.out[0]);
        run_decoder(e2, tr.branch[1], tr.out[1]);
    }
    return tr;
}

template <class T>
void DecompositionNet<T>::backward(const DualTrace<T>& tr, const Decomposition<T>& grad1,
                                   const Decomposition<T>& grad2) {
    std::vector<Image<T>> skips[2];
    for (int b = 0; b < 2; ++b) {
        for (int l = 0; l < config_.depth; ++l) {
            const auto& s = tr.branch[b].encoder[static_cast<std::size_t>(2 * l + 1)].out;
            skips[b].emplace_back(s.channels(), s.height(), s.width());
        }
    }
    Image<T> d1 = backward_decoder(tr.branch[0], tr.out[0], grad1, skips[0]);
    Image<T> d2 = backward_decoder(tr.branch[1], tr.out[1], grad2, skips[1]);
    if (config_.use_cfim) std::tie(d1, d2) = backward_cfim(tr.cfim, d1, d2);
    backward_encoder(tr.branch[0], d1, skips[0]);
    backward_encoder(tr.branch[1], d2, skips[1]);
}

template <class T>
std::pair<Decomposition<T>, Decomposition<T>> DecompositionNet<T>::forward_dual(const Image<T>& frame1,
                                                                                const Image<T>& frame2) const {
    auto tr = forward_dual_trace(frame1, frame2);
    return {std::move(tr.out[0]), std::move(tr.out[1])};
}

template <class T>
Decomposition<T> DecompositionNet<T>::forward_single(const Image<T>& frame, const Image<T>& reference) const {
    if (!config_.use_cfim) {
        if (frame.channels() != 3) throw ShapeError("forward_single: expected a 3-channel frame");
        config_.check_input_size(frame.height(), frame.width());
        BranchTrace<T> tr;
        Decomposition<T> out;
        run_encoder(frame, tr);
        run_decoder(tr.encoder.back().out, tr, out);
        return out;
    }
    return forward_dual(frame, reference).first;
}

template <class T>
Image<T> DecompositionNet<T>::encode(const Image<T>& frame) const {
    config_.check_input_size(frame.height(), frame.width());
    BranchTrace<T> tr;
    run_encoder(frame, tr);
    return std::move(tr.encoder.back().out);
}

template <class T>
std::pair<Image<T>, Image<T>> DecompositionNet<T>::cfim(const Image<T>& f1, const Image<T>& f2) const {
    if (f1.channels() != channels_at(config_.depth))
        throw ShapeError("cfim: expected " + std::to_string(channels_at(config_.depth)) + " channels");
    CfimTrace<T> tr;
    return run_cfim(f1, f2, tr);
}

template <class T>
CfimAttentionOutputs<T> DecompositionNet<T>::cfim_attention(const Image<T>& f1, const Image<T>& f2) const {
    require_same_shape(f1, f2, "cfim_attention");
    const int H = f1.height(), W = f1.width();
    const bool sc = config_.attention_scaled;
    const auto t1 = to_tokens(f1);
    const auto t2 = to_tokens(f2);
    return {from_tokens(attention(t1, t1, t1, sc), H, W), from_tokens(attention(t1, t2, t2, sc), H, W),
            from_tokens(attention(t2, t2, t2, sc), H, W), from_tokens(attention(t2, t1, t1, sc), H, W)};
}

template <class T>
std::vector<Parameter<T>*> DecompositionNet<T>::parameters() {
    std::vector<Parameter<T>*> out;
    auto add = [&](Conv2d<T>& c) {
        out.push_back(&c.weight());
        out.push_back(&c.bias());
    };
    for (auto& c : encoder_) add(c);
    add(fuse1_);
    add(fuse2_);
    for (std::size_t i = 0; i < up_.size(); ++i) {
        add(up_[i]);
        add(merge_[i]);
    }
    add(head_);
    return out;
}

template <class T>
std::vector<const Parameter<T>*> DecompositionNet<T>::parameters() const {
    auto mut = const_cast<DecompositionNet*>(this)->parameters();
    return {mut.begin(), mut.end()};
}

template <class T>
std::size_t DecompositionNet<T>::parameter_count() const {
    std::size_t n = 0;
    for (const auto* p : parameters()) n += p->size();
    return n;
}

template <class T>
void DecompositionNet<T>::zero_grad() {
    for (auto* p : parameters()) std::fill(p->grad.begin(), p->grad.end(), T(0));
}

template <class T>
Image<T> compose(const Decomposition<T>& out, bool clip) {
    require_same_shape(out.illumination, out.reflectance, "compose");
    Image<T> y(out.illumination.channels(), out.illumination.height(), out.illumination.width());
    const T* L = out.illumination.data();
    const T* R = out.reflectance.data();
    T* o = y.data();
    for (std::size_t i = 0; i < y.size(); ++i) {
        const T v = L[i] * R[i];
        o[i] = clip ? std::clamp(v, T(0), T(1)) : v;
    }
    return y;
}

template class DecompositionNet<float>;
template class DecompositionNet<double>;
template Image<float> compose(const Decomposition<float>&, bool);
template Image<double> compose(const Decomposition<double>&, bool);

}  // namespace lumisplit::model
