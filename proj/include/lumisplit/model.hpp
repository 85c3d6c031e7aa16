#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "lumisplit/image.hpp"
#include "lumisplit/losses.hpp"

namespace lumisplit::model {

using losses::Decomposition;

struct NetworkConfig {
    int base_channels = 32;
    int depth = 3;                  // number of stride-2 downsamplings
    bool attention_scaled = false;  // divide logits by sqrt(C)
    float l_max = 4.0f;             // upper bound of the illumination map
    bool use_cfim = true;           // false: two independent single-frame passes

    void validate() const;
    /// Throws InvalidArgument unless h and w are divisible by 2^depth.
    void check_input_size(int height, int width) const;
    friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

inline constexpr float kIlluminationFloor = 1e-4f;
inline constexpr float kLeakySlope = 0.2f;

template <class T>
struct Parameter {
    std::string name;
    std::vector<int> shape;
    std::vector<T> value;
    std::vector<T> grad;

    std::size_t size() const noexcept { return value.size(); }
};

/// Row-major token matrix: one row per spatial position, one column per channel.
template <class T>
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<T> data;

    Matrix() = default;
    Matrix(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, T(0)) {}
    T& at(int i, int j) noexcept { return data[static_cast<std::size_t>(i) * cols + j]; }
    const T& at(int i, int j) const noexcept { return data[static_cast<std::size_t>(i) * cols + j]; }
};

template <class T>
Matrix<T> to_tokens(const Image<T>& features);
template <class T>
Image<T> from_tokens(const Matrix<T>& tokens, int height, int width);

template <class T>
struct AttentionCache {
    Matrix<T> probs;  // row-stochastic N x N'
};

/// softmax(Q K^T [/ sqrt(C)]) V with a row-wise softmax over the N' keys.
template <class T>
Matrix<T> attention(const Matrix<T>& q, const Matrix<T>& k, const Matrix<T>& v, bool scaled,
                    AttentionCache<T>* cache = nullptr);

template <class T>
struct AttentionGrads {
    Matrix<T> dq, dk, dv;
};

template <class T>
AttentionGrads<T> attention_backward(const Matrix<T>& q, const Matrix<T>& k, const Matrix<T>& v,
                                     const AttentionCache<T>& cache, const Matrix<T>& dout, bool scaled);

/// Allocator that leaves elements uninitialized on resize; for scratch
/// buffers that are fully overwritten.
template <class T>
struct UninitAllocator : std::allocator<T> {
    template <class U>
    struct rebind {
        using other = UninitAllocator<U>;
    };
    UninitAllocator() = default;
    template <class U>
    UninitAllocator(const UninitAllocator<U>&) noexcept {}
    template <class U>
    void construct(U* p) noexcept {
        ::new (static_cast<void*>(p)) U;
    }
    template <class U, class... Args>
    void construct(U* p, Args&&... args) {
        ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
    }
};

template <class T>
using ScratchBuffer = std::vector<T, UninitAllocator<T>>;

struct ConvSpec {
    int in_channels = 0;
    int out_channels = 0;
    int kernel = 3;
    int stride = 1;
};

template <class T>
struct ConvCache {
    ScratchBuffer<T> columns;  // im2col of the input
    int in_height = 0;
    int in_width = 0;
};

/// Zero-padded 2-D convolution lowered to im2col + GEMM.
template <class T>
class Conv2d {
public:
    Conv2d() = default;
    Conv2d(std::string name, ConvSpec spec);

    /// Kaiming-uniform weights for a leaky ReLU, zero bias.
    void init(std::mt19937_64& rng);

    Image<T> forward(const Image<T>& x, ConvCache<T>* cache) const;
    /// Accumulates weight/bias gradients; returns dL/dx when requested.
    Image<T> backward(const Image<T>& dy, const ConvCache<T>& cache, bool need_input_grad);

    const ConvSpec& spec() const noexcept { return spec_; }
    Parameter<T>& weight() noexcept { return weight_; }
    Parameter<T>& bias() noexcept { return bias_; }
    const Parameter<T>& weight() const noexcept { return weight_; }
    const Parameter<T>& bias() const noexcept { return bias_; }

private:
    ConvSpec spec_;
    Parameter<T> weight_;
    Parameter<T> bias_;
};

/// Which attention paths feed the fusion network; both on in normal use.
struct CfimPaths {
    bool self_path = true;
    bool cross_path = true;
};

/// The four attention outputs as feature maps, before fusion.
template <class T>
struct CfimAttentionOutputs {
    Image<T> self1, cross1, self2, cross2;
};

// Intermediate values kept by a training forward pass.
template <class T>
struct ConvRecord {
    ConvCache<T> cache;
    Image<T> out;
};

template <class T>
struct BranchTrace {
    std::vector<ConvRecord<T>> encoder;  // 2 per level; level l skip = encoder[2l + 1].out
    std::vector<ConvRecord<T>> up;       // index l - 1 for decoder level l
    std::vector<ConvRecord<T>> merge;
    ConvRecord<T> head;
};

template <class T>
struct CfimTrace {
    Matrix<T> tokens1, tokens2;
    AttentionCache<T> self1, cross1, self2, cross2;
    ConvRecord<T> fuse1[2];  // per frame, input [own, other]
    ConvRecord<T> fuse2[2];
    Image<T> fused;  // both pre-gate outputs, concatenated
    std::vector<T> gate;
};

template <class T>
struct DualTrace {
    BranchTrace<T> branch[2];
    CfimTrace<T> cfim;
    Decomposition<T> out[2];
};

/// U-Net shared by both frames, with the cross-frame interaction module at
/// the deepest scale and a 6-channel head split into illumination and
/// reflectance.
template <class T>
class DecompositionNet {
public:
    DecompositionNet(NetworkConfig config, std::uint64_t seed);

    const NetworkConfig& config() const noexcept { return config_; }
    void set_use_cfim(bool on) noexcept { config_.use_cfim = on; }
    void set_cfim_paths(CfimPaths paths) noexcept { paths_ = paths; }

    std::pair<Decomposition<T>, Decomposition<T>> forward_dual(const Image<T>& frame1, const Image<T>& frame2) const;

    /// Output for `frame` with `reference` as the second input.
    Decomposition<T> forward_single(const Image<T>& frame, const Image<T>& reference) const;

    DualTrace<T> forward_dual_trace(const Image<T>& frame1, const Image<T>& frame2) const;

    /// Adds parameter gradients for the given output gradients.
    void backward(const DualTrace<T>& trace, const Decomposition<T>& grad1, const Decomposition<T>& grad2);

    /// Deepest encoder features of one frame.
    Image<T> encode(const Image<T>& frame) const;

    /// The cross-frame interaction module alone.
    std::pair<Image<T>, Image<T>> cfim(const Image<T>& f1, const Image<T>& f2) const;
    CfimAttentionOutputs<T> cfim_attention(const Image<T>& f1, const Image<T>& f2) const;

    std::vector<Parameter<T>*> parameters();
    std::vector<const Parameter<T>*> parameters() const;
    std::size_t parameter_count() const;
    void zero_grad();

    /// Copies parameter values from a network of the same architecture.
    template <class U>
    void copy_parameters_from(const DecompositionNet<U>& other) {
        auto dst = parameters();
        auto src = other.parameters();
        if (dst.size() != src.size()) throw InvalidArgument("copy_parameters_from: architecture mismatch");
        for (std::size_t i = 0; i < dst.size(); ++i) {
            if (dst[i]->size() != src[i]->size()) throw InvalidArgument("copy_parameters_from: size mismatch");
            for (std::size_t j = 0; j < dst[i]->size(); ++j) dst[i]->value[j] = static_cast<T>(src[i]->value[j]);
        }
    }

private:
    int channels_at(int level) const noexcept { return config_.base_channels << level; }
    void run_encoder(const Image<T>& x, BranchTrace<T>& trace) const;
    void run_decoder(const Image<T>& deepest, BranchTrace<T>& trace, Decomposition<T>& out) const;
    std::pair<Image<T>, Image<T>> run_cfim(const Image<T>& f1, const Image<T>& f2, CfimTrace<T>& trace) const;
    Image<T> backward_decoder(const BranchTrace<T>& trace, const Decomposition<T>& out, const Decomposition<T>& grad,
                              std::vector<Image<T>>& skip_grads);
    std::pair<Image<T>, Image<T>> backward_cfim(const CfimTrace<T>& trace, const Image<T>& d1, const Image<T>& d2);
    void backward_encoder(const BranchTrace<T>& trace, const Image<T>& deepest_grad, std::vector<Image<T>>& skip_grads);

    NetworkConfig config_;
    CfimPaths paths_;
    std::vector<Conv2d<T>> encoder_;  // level l: [2l] (stride 2 for l > 0), [2l + 1]
    Conv2d<T> fuse1_;
    Conv2d<T> fuse2_;
    std::vector<Conv2d<T>> up_;
    std::vector<Conv2d<T>> merge_;
    Conv2d<T> head_;
};

/// Element-wise product L * R; clipped to [0, 1] when `clip` is set.
template <class T>
Image<T> compose(const Decomposition<T>& out, bool clip = false);

// ---- Checkpoint blobs -----------------------------------------------------

inline constexpr std::uint32_t kModelFormatVersion = 1;

void write_model(std::ostream& os, const DecompositionNet<float>& net);
/// Reads a model blob; throws CheckpointError on corruption or, when
/// `expected` is given, on a config mismatch.
DecompositionNet<float> read_model(std::istream& is, const std::string& source,
                                   const NetworkConfig* expected = nullptr);

void save_model(const std::filesystem::path& path, const DecompositionNet<float>& net);
DecompositionNet<float> load_model(const std::filesystem::path& path, const NetworkConfig* expected = nullptr);

}  // namespace lumisplit::model
