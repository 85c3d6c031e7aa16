#pragma once

#include "lumisplit/correspondence.hpp"
#include "lumisplit/image.hpp"

namespace lumisplit::losses {

/// Network prediction for one frame: the view-dependent (illumination) map
/// and the view-independent (reflectance) map. Both 3 x H x W.
template <class T>
struct Decomposition {
    Image<T> illumination;  // in (0, L_max]
    Image<T> reflectance;   // in [0, 1]

    /// Zero-filled decomposition with the same shapes, used for gradients.
    Decomposition zeros_like() const {
        return {Image<T>(illumination.channels(), illumination.height(), illumination.width()),
                Image<T>(reflectance.channels(), reflectance.height(), reflectance.width())};
    }
};

/// Edge-aware weights for the illumination smoothness term, one per
/// pixel/channel, from the log of the low-light input.
template <class T>
struct SmoothnessWeights {
    Image<T> horizontal;  // (|dU/dx| + delta)^-1
    Image<T> vertical;    // (|dU/dy| + delta)^-1
};

inline constexpr double kSmoothnessDelta = 1e-4;
inline constexpr double kLogEpsilon = 1e-6;

struct LossToggles {
    bool use_consistency = true;
    bool use_smoothness = true;
    bool dual_supervision = true;
};

struct LossReport {
    double total = 0;
    double rec_t1 = 0;
    double rec_t2 = 0;
    double smooth_t1 = 0;
    double smooth_t2 = 0;
    double consistency = 0;
    double lambda1 = 0;
    double lambda2 = 0;

    /// rec_t1 + rec_t2 + lambda1 (smooth_t1 + smooth_t2) + lambda2 consistency
    double composed_total() const noexcept {
        return rec_t1 + rec_t2 + lambda1 * (smooth_t1 + smooth_t2) + lambda2 * consistency;
    }
};

// Each *_backward function returns the loss value and adds scale * dLoss/dx
// into the provided gradient buffers.

/// Mean over pixels and channels of |target - L * R|.
template <class T>
T reconstruction_loss(const Image<T>& target, const Decomposition<T>& out);
template <class T>
T reconstruction_loss_backward(const Image<T>& target, const Decomposition<T>& out, T scale, Decomposition<T>& grad);

/// Forward differences of U = log(I + 1e-6); the last column (row) has zero
/// gradient.
template <class T>
SmoothnessWeights<T> smoothness_weights(const Image<T>& low_light, double delta = kSmoothnessDelta);

/// Mean over pixels and channels of v (dL/dx)^2 + w (dL/dy)^2.
template <class T>
T illumination_smoothness_loss(const Image<T>& illumination, const SmoothnessWeights<T>& weights);
template <class T>
T illumination_smoothness_loss_backward(const Image<T>& illumination, const SmoothnessWeights<T>& weights, T scale,
                                        Image<T>& grad);

/// Mean over matches of weight * channel-mean |R1(x1,y1) - R2(x2,y2)| with
/// bilinear sampling. Throws InvalidArgument on an empty set.
template <class T>
T reflectance_consistency_loss(const Image<T>& r1, const Image<T>& r2,
                               const correspondence::CorrespondenceSet& matches);
template <class T>
T reflectance_consistency_loss_backward(const Image<T>& r1, const Image<T>& r2,
                                        const correspondence::CorrespondenceSet& matches, T scale, Image<T>& grad_r1,
                                        Image<T>& grad_r2);

/// Inputs of the dual objective for one (t1, t2) sample.
template <class T>
struct ObjectiveInputs {
    const Image<T>* normal_t1;
    const Image<T>* normal_t2;
    const Decomposition<T>* out_t1;
    const Decomposition<T>* out_t2;
    const correspondence::CorrespondenceSet* matches;  // may be null or empty: term skipped
    const SmoothnessWeights<T>* weights_t1;
    const SmoothnessWeights<T>* weights_t2;
};

template <class T>
LossReport total_objective(const ObjectiveInputs<T>& in, double lambda1, double lambda2, const LossToggles& toggles);

/// Same as total_objective, also accumulating scale * gradients w.r.t. both
/// decompositions.
template <class T>
LossReport total_objective_backward(const ObjectiveInputs<T>& in, double lambda1, double lambda2,
                                    const LossToggles& toggles, T scale, Decomposition<T>& grad_t1,
                                    Decomposition<T>& grad_t2);

/// Convenience overload computing smoothness weights from the low-light
/// frames.
template <class T>
LossReport total_objective(const Image<T>& normal_t1, const Image<T>& normal_t2, const Decomposition<T>& out_t1,
                           const Decomposition<T>& out_t2, const correspondence::CorrespondenceSet& matches,
                           const Image<T>& low_t1, const Image<T>& low_t2, double lambda1, double lambda2,
                           const LossToggles& toggles);

}  // namespace lumisplit::losses
