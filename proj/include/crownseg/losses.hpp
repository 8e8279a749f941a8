#pragma once

#include <cstdint>
#include <span>

#include "crownseg/tensor.hpp"

namespace crownseg {

/// Label value marking a pixel outside the annotated set.
inline constexpr std::int32_t kUnlabeled = -1;

inline constexpr double kProbabilityClamp = 1e-7;

/// Partial categorical focal loss over a batch of probability maps.
///
/// `probs` is N x C x H x W (softmax output), `labels` holds N*H*W class ids
/// with kUnlabeled outside the annotated set. For each tile with at least one
/// labelled pixel the loss is
///
///     -(1/|labelled|) * sum_labelled (1 - p_true)^gamma * log(p_true)
///
/// with p_true clamped to [kProbabilityClamp, 1 - kProbabilityClamp]; the
/// batch value is the mean over tiles that have labelled pixels. Unlabelled
/// pixels contribute neither value nor gradient. gamma = 0 gives the partial
/// cross-entropy.
template <typename T>
Tensor<T> partial_focal_loss(Tape<T>* tape, const Tensor<T>& probs, std::span<const std::int32_t> labels,
                             double gamma);

/// Partial mean squared error between a predicted distance map (N x 1 x H x W)
/// and its target, restricted to pixels where `valid` is non-zero. Per-tile
/// normalisation and batch averaging follow partial_focal_loss.
template <typename T>
Tensor<T> partial_mse(Tape<T>* tape, const Tensor<T>& pred, std::span<const float> target,
                      std::span<const std::uint8_t> valid);

/// l1 + lambda * l2, recorded on the tape when either input needs a gradient.
template <typename T>
Tensor<T> total_loss(Tape<T>* tape, const Tensor<T>& l1, const Tensor<T>& l2, double lambda);

/// Scalar form of total_loss.
inline double total_loss(double l1, double l2, double lambda) { return l1 + lambda * l2; }

} // namespace crownseg
