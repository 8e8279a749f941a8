#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "crownseg/rng.hpp"
#include "crownseg/tensor.hpp"

namespace crownseg {

// Differentiable operations. Every op takes an optional tape: with a null
// tape (or when no input requires a gradient) nothing is recorded and the op
// is a plain forward evaluation.

enum class Padding { same_zero, valid };
enum class Mode { train, eval };
enum class Activation { elu, sigmoid, softmax_channels };

struct Conv2dOptions {
    std::size_t stride = 1;
    std::size_t dilation = 1; // atrous rate
    Padding padding = Padding::same_zero;
};

/// 2-D (atrous) convolution, x: N x Cin x H x W, w: Cout x Cin x Kh x Kw,
/// b: Cout (may be undefined for no bias). Output pixel
/// y[o] = sum_k x[o*stride + dilation*k - pad] * w[k] + b.
template <typename T>
Tensor<T> conv2d(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                 const Conv2dOptions& opts = {});

/// Output spatial extent of conv2d along one axis; throws on impossible geometry.
std::size_t conv_output_extent(std::size_t input, std::size_t kernel, const Conv2dOptions& opts);

template <typename T>
struct BatchNormState {
    Tensor<T> running_mean; // C
    Tensor<T> running_var;  // C

    static BatchNormState fresh(std::size_t channels);
};

struct BatchNormOptions {
    double epsilon = 1e-5;
    double momentum = 0.9; // running = momentum * running + (1 - momentum) * batch
};

/// Per-channel batch normalisation. Train mode normalises with batch
/// statistics (biased variance) and updates `state`; eval mode uses it.
template <typename T>
Tensor<T> batch_norm(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     BatchNormState<T>& state, Mode mode, const BatchNormOptions& opts = {});

/// Eval-mode batch normalisation; never touches the running state.
template <typename T>
Tensor<T> batch_norm_eval(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                          const BatchNormState<T>& state, const BatchNormOptions& opts = {});

template <typename T>
Tensor<T> activation(Tape<T>* tape, const Tensor<T>& x, Activation kind);

template <typename T>
Tensor<T> elu(Tape<T>* tape, const Tensor<T>& x) { return activation(tape, x, Activation::elu); }
template <typename T>
Tensor<T> sigmoid(Tape<T>* tape, const Tensor<T>& x) { return activation(tape, x, Activation::sigmoid); }
template <typename T>
Tensor<T> softmax_channels(Tape<T>* tape, const Tensor<T>& x) {
    return activation(tape, x, Activation::softmax_channels);
}

/// Bilinear resize with half-pixel centres (no corner alignment) to out_h x out_w.
template <typename T>
Tensor<T> resize_bilinear(Tape<T>* tape, const Tensor<T>& x, std::size_t out_h, std::size_t out_w);

template <typename T>
Tensor<T> bilinear_upsample(Tape<T>* tape, const Tensor<T>& x, std::size_t factor);

template <typename T>
Tensor<T> global_avg_pool(Tape<T>* tape, const Tensor<T>& x);

template <typename T>
Tensor<T> concat_channels(Tape<T>* tape, std::span<const Tensor<T>> xs);

template <typename T>
Tensor<T> concat_channels(Tape<T>* tape, std::initializer_list<Tensor<T>> xs) {
    std::vector<Tensor<T>> v(xs);
    return concat_channels<T>(tape, std::span<const Tensor<T>>(v));
}

template <typename T>
Tensor<T> slice_channels(Tape<T>* tape, const Tensor<T>& x, std::size_t begin, std::size_t count);

/// Inverted dropout: train mode keeps each unit with probability 1 - rate and
/// scales survivors by 1 / (1 - rate); eval mode is the identity.
template <typename T>
Tensor<T> dropout(Tape<T>* tape, const Tensor<T>& x, double rate, Mode mode, Rng& rng);

template <typename T>
Tensor<T> add(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b);

/// Scalar sum of all entries.
template <typename T>
Tensor<T> sum(Tape<T>* tape, const Tensor<T>& x);

/// Scalar sum_i weights[i] * x[i]; weights are treated as constants.
template <typename T>
Tensor<T> weighted_sum(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& weights);

// shared helpers for ops defined in other modules
namespace detail {

template <typename T>
bool any_requires_grad(std::initializer_list<const Tensor<T>*> xs) {
    for (auto* t : xs)
        if (t && t->defined() && t->requires_grad()) return true;
    return false;
}

} // namespace detail

} // namespace crownseg
