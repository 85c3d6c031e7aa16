#include "lumisplit/losses.hpp"

#include <cmath>

namespace lumisplit::losses {

namespace {

template <class T>
T sign(T v) {
    return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0));
}

template <class T>
void check_decomposition(const Image<T>& target, const Decomposition<T>& out, const char* what) {
    require_same_shape(target, out.illumination, what);
    require_same_shape(target, out.reflectance, what);
}

template <class T>
T reconstruction_impl(const Image<T>& target, const Decomposition<T>& out, T scale, Decomposition<T>* grad) {
    check_decomposition(target, out, "reconstruction_loss");
    const std::size_t n = target.size();
    const T* I = target.data();
    const T* L = out.illumination.data();
    const T* R = out.reflectance.data();
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) sum += std::abs(static_cast<double>(I[i] - L[i] * R[i]));
    if (grad) {
        T* gL = grad->illumination.data();
        T* gR = grad->reflectance.data();
        const T k = scale / static_cast<T>(n);
        for (std::size_t i = 0; i < n; ++i) {
            const T s = -sign(I[i] - L[i] * R[i]) * k;
            gL[i] += s * R[i];
            gR[i] += s * L[i];
        }
    }
    return static_cast<T>(sum / static_cast<double>(n));
}

template <class T>
T smoothness_impl(const Image<T>& L, const SmoothnessWeights<T>& w, T scale, Image<T>* grad) {
    require_same_shape(L, w.horizontal, "illumination_smoothness_loss");
    require_same_shape(L, w.vertical, "illumination_smoothness_loss");
    const int C = L.channels(), H = L.height(), W = L.width();
    const double n = static_cast<double>(L.size());
    double sum = 0.0;
    const T k = T(2) * scale / static_cast<T>(n);
    for (int c = 0; c < C; ++c) {
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                const T gx = x + 1 < W ? L.at(c, y, x + 1) - L.at(c, y, x) : T(0);
                const T gy = y + 1 < H ? L.at(c, y + 1, x) - L.at(c, y, x) : T(0);
                const T vx = w.horizontal.at(c, y, x);
                const T vy = w.vertical.at(c, y, x);
                sum += static_cast<double>(vx * gx * gx) + static_cast<double>(vy * gy * gy);
                if (grad) {
                    if (x + 1 < W) {
                        const T g = k * vx * gx;
                        grad->at(c, y, x + 1) += g;
                        grad->at(c, y, x) -= g;
                    }
                    if (y + 1 < H) {
                        const T g = k * vy * gy;
                        grad->at(c, y + 1, x) += g;
                        grad->at(c, y, x) -= g;
                    }
                }
            }
        }
    }
    return static_cast<T>(sum / n);
}

template <class T>
T consistency_impl(const Image<T>& r1, const Image<T>& r2, const correspondence::CorrespondenceSet& matches, T scale,
                   Image<T>* g1, Image<T>* g2) {
    require_same_shape(r1, r2, "reflectance_consistency_loss");
    if (matches.empty()) throw InvalidArgument("reflectance_consistency_loss: empty correspondence set");
    const int C = r1.channels();
    const double m_count = static_cast<double>(matches.size());
    const T k = scale / static_cast<T>(m_count * C);
    double sum = 0.0;
    for (const auto& m : matches.matches) {
        double per_match = 0.0;
        for (int c = 0; c < C; ++c) {
            const T d = sample_bilinear(r1, c, m.x1, m.y1) - sample_bilinear(r2, c, m.x2, m.y2);
            per_match += std::abs(static_cast<double>(d));
            if (g1) {
                const T g = k * static_cast<T>(m.weight) * sign(d);
                scatter_bilinear(*g1, c, m.x1, m.y1, g);
                scatter_bilinear(*g2, c, m.x2, m.y2, -g);
            }
        }
        sum += static_cast<double>(m.weight) * per_match / C;
    }
    return static_cast<T>(sum / m_count);
}

template <class T>
LossReport objective_impl(const ObjectiveInputs<T>& in, double lambda1, double lambda2, const LossToggles& toggles,
                          T scale, Decomposition<T>* g1, Decomposition<T>* g2) {
    LossReport r;
    r.lambda1 = lambda1;
    r.lambda2 = lambda2;
    r.rec_t1 = reconstruction_impl(*in.normal_t1, *in.out_t1, scale, g1);
    if (toggles.dual_supervision) r.rec_t2 = reconstruction_impl(*in.normal_t2, *in.out_t2, scale, g2);
    if (toggles.use_smoothness) {
        const T s1 = static_cast<T>(lambda1) * scale;
        r.smooth_t1 = smoothness_impl(in.out_t1->illumination, *in.weights_t1, s1, g1 ? &g1->illumination : nullptr);
        if (toggles.dual_supervision)
            r.smooth_t2 =
                smoothness_impl(in.out_t2->illumination, *in.weights_t2, s1, g2 ? &g2->illumination : nullptr);
    }
    if (toggles.use_consistency && in.matches && !in.matches->empty()) {
        const T s2 = static_cast<T>(lambda2) * scale;
        r.consistency = consistency_impl(in.out_t1->reflectance, in.out_t2->reflectance, *in.matches, s2,
                                         g1 ? &g1->reflectance : nullptr, g2 ? &g2->reflectance : nullptr);
    }
    r.total = r.composed_total();
    return r;
}

}  // namespace

template <class T>
T reconstruction_loss(const Image<T>& target, const Decomposition<T>& out) {
    return reconstruction_impl<T>(target, out, T(0), nullptr);
}

template <class T>
T reconstruction_loss_backward(const Image<T>& target, const Decomposition<T>& out, T scale, Decomposition<T>& grad) {
    check_decomposition(target, grad, "reconstruction_loss_backward");
    return reconstruction_impl(target, out, scale, &grad);
}

template <class T>
SmoothnessWeights<T> smoothness_weights(const Image<T>& low_light, double delta) {
    if (!(delta > 0.0)) throw InvalidArgument("smoothness_weights: delta must be positive");
    const int C = low_light.channels(), H = low_light.height(), W = low_light.width();
    SmoothnessWeights<T> w{Image<T>(C, H, W), Image<T>(C, H, W)};
    auto log_at = [&](int c, int y, int x) { return std::log(static_cast<double>(low_light.at(c, y, x)) + kLogEpsilon); };
    for (int c = 0; c < C; ++c) {
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                const double u = log_at(c, y, x);
                const double gx = x + 1 < W ? log_at(c, y, x + 1) - u : 0.0;
                const double gy = y + 1 < H ? log_at(c, y + 1, x) - u : 0.0;
                w.horizontal.at(c, y, x) = static_cast<T>(1.0 / (std::abs(gx) + delta));
                w.vertical.at(c, y, x) = static_cast<T>(1.0 / (std::abs(gy) + delta));
            }
        }
    }
    return w;
}

template <class T>
T illumination_smoothness_loss(const Image<T>& illumination, const SmoothnessWeights<T>& weights) {
    return smoothness_impl<T>(illumination, weights, T(0), nullptr);
}

template <class T>
T illumination_smoothness_loss_backward(const Image<T>& illumination, const SmoothnessWeights<T>& weights, T scale,
                                        Image<T>& grad) {
    require_same_shape(illumination, grad, "illumination_smoothness_loss_backward");
    return smoothness_impl(illumination, weights, scale, &grad);
}

template <class T>
T reflectance_consistency_loss(const Image<T>& r1, const Image<T>& r2,
                               const correspondence::CorrespondenceSet& matches) {
    return consistency_impl<T>(r1, r2, matches, T(0), nullptr, nullptr);
}

template <class T>
T reflectance_consistency_loss_backward(const Image<T>& r1, const Image<T>& r2,
                                        const correspondence::CorrespondenceSet& matches, T scale, Image<T>& grad_r1,
                                        Image<T>& grad_r2) {
    require_same_shape(r1, grad_r1, "reflectance_consistency_loss_backward");
    require_same_shape(r2, grad_r2, "reflectance_consistency_loss_backward");
    return consistency_impl(r1, r2, matches, scale, &grad_r1, &grad_r2);
}

template <class T>
LossReport total_objective(const ObjectiveInputs<T>& in, double lambda1, double lambda2, const LossToggles& toggles) {
    return objective_impl<T>(in, lambda1, lambda2, toggles, T(0), nullptr, nullptr);
}

template <class T>
LossReport total_objective_backward(const ObjectiveInputs<T>& in, double lambda1, double lambda2,
                                    const LossToggles& toggles, T scale, Decomposition<T>& grad_t1,
                                    Decomposition<T>& grad_t2) {
    return objective_impl(in, lambda1, lambda2, toggles, scale, &grad_t1, &grad_t2);
}

template <class T>
LossReport total_objective(const Image<T>& normal_t1, const Image<T>& normal_t2, const Decomposition<T>& out_t1,
                           const Decomposition<T>& out_t2, const correspondence::CorrespondenceSet& matches,
                           const Image<T>& low_t1, const Image<T>& low_t2, double lambda1, double lambda2,
                           const LossToggles& toggles) {
    const auto w1 = smoothness_weights(low_t1);
    const auto w2 = smoothness_weights(low_t2);
    ObjectiveInputs<T> in{&normal_t1, &normal_t2, &out_t1, &out_t2, &matches, &w1, &w2};
    return total_objective(in, lambda1, lambda2, toggles);
}

#define LUMISPLIT_INSTANTIATE_LOSSES(T)                                                                              \
    template T reconstruction_loss(const Image<T>&, const Decomposition<T>&);                                        \
    template T reconstruction_loss_backward(const Image<T>&, const Decomposition<T>&, T, Decomposition<T>&);         \
    template SmoothnessWeights<T> smoothness_weights(const Image<T>&, double);                                       \
    template T illumination_smoothness_loss(const Image<T>&, const SmoothnessWeights<T>&);                           \
    template T illumination_smoothness_loss_backward(const Image<T>&, const SmoothnessWeights<T>&, T, Image<T>&);    \
    template T reflectance_consistency_loss(const Image<T>&, const Image<T>&,                                        \
                                            const correspondence::CorrespondenceSet&);                               \
    template T reflectance_consistency_loss_backward(const Image<T>&, const Image<T>&,                               \
                                                     const correspondence::CorrespondenceSet&, T, Image<T>&,         \
                                                     Image<T>&);                                                     \
    template LossReport total_objective(const ObjectiveInputs<T>&, double, double, const LossToggles&);              \
    template LossReport total_objective_backward(const ObjectiveInputs<T>&, double, double, const LossToggles&, T,   \
                                                 Decomposition<T>&, Decomposition<T>&);                              \
    template LossReport total_objective(const Image<T>&, const Image<T>&, const Decomposition<T>&,                   \
                                        const Decomposition<T>&, const correspondence::CorrespondenceSet&,           \
                                        const Image<T>&, const Image<T>&, double, double, const LossToggles&);

LUMISPLIT_INSTANTIATE_LOSSES(float)
LUMISPLIT_INSTANTIATE_LOSSES(double)

#undef LUMISPLIT_INSTANTIATE_LOSSES

}  // namespace lumisplit::losses
