#include "crownseg/losses.hpp"

#include <cmath>
#include <string>
#include <vector>

#include "crownseg/ops.hpp"

namespace crownseg {

template <typename T>
Tensor<T> partial_focal_loss(Tape<T>* tape, const Tensor<T>& probs, std::span<const std::int32_t> labels,
                             double gamma) {
    if (probs.rank() != 4) throw DimensionError("partial_focal_loss expects N x C x H x W probabilities");
    if (!(gamma >= 0.0)) throw ParameterError("focusing parameter gamma must be non-negative");
    const std::size_t n = probs.dim(0), c = probs.dim(1), hw = probs.dim(2) * probs.dim(3);
    if (labels.size() != n * hw)
        throw DimensionError("label count " + std::to_string(labels.size()) + " does not match " +
                             shape_string(probs.shape()));

    const double lo = kProbabilityClamp, hi = 1.0 - kProbabilityClamp;
    // per-tile weight 1 / (|labelled| * tiles_with_support)
    std::vector<double> tile_weight(n, 0.0);
    std::size_t supported = 0;
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t count = 0;
        for (std::size_t k = 0; k < hw; ++k) {
            const auto lab = labels[i * hw + k];
            if (lab == kUnlabeled) continue;
            if (lab < 0 || static_cast<std::size_t>(lab) >= c)
                throw ValidationError("label " + std::to_string(lab) + " outside [-1, " + std::to_string(c - 1) + "]");
            ++count;
        }
        if (count > 0) {
            tile_weight[i] = 1.0 / static_cast<double>(count);
            ++supported;
        }
    }
    if (supported == 0) throw EmptySupportError("partial_focal_loss: no labelled pixels in batch");
    for (auto& w : tile_weight) w /= static_cast<double>(supported);

    const T* pv = probs.values().data();
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (tile_weight[i] == 0.0) continue;
        double tile = 0.0;
        for (std::size_t k = 0; k < hw; ++k) {
            const auto lab = labels[i * hw + k];
            if (lab == kUnlabeled) continue;
            double p = pv[(i * c + static_cast<std::size_t>(lab)) * hw + k];
            p = std::min(std::max(p, lo), hi);
            tile += -std::pow(1.0 - p, gamma) * std::log(p);
        }
        total += tile * tile_weight[i];
    }

    Tensor<T> loss({1}, static_cast<T>(total), probs.requires_grad());
    if (tape && loss.requires_grad()) {
        auto pn = probs.node_ptr(), ln = loss.node_ptr();
        std::vector<std::int32_t> lab_copy(labels.begin(), labels.end());
        tape->record({pn}, ln,
                     [n, c, hw, gamma, lo, hi, tile_weight = std::move(tile_weight), lab_copy = std::move(lab_copy),
                      pn = pn.get(), ln = ln.get()]() {
                         const double g = ln->grad[0];
                         T* dp = pn->ensure_grad().data();
                         for (std::size_t i = 0; i < n; ++i) {
                             if (tile_weight[i] == 0.0) continue;
                             for (std::size_t k = 0; k < hw; ++k) {
                                 const auto lab = lab_copy[i * hw + k];
                                 if (lab == kUnlabeled) continue;
                                 const std::size_t idx = (i * c + static_cast<std::size_t>(lab)) * hw + k;
                                 const double p = pn->value[idx];
                                 if (p < lo || p > hi) continue; // clamped: flat
                                 // d/dp [-(1-p)^g log p] = g (1-p)^(g-1) log p - (1-p)^g / p
                                 const double q = 1.0 - p;
                                 double d = -std::pow(q, gamma) / p;
                                 if (gamma != 0.0) d += gamma * std::pow(q, gamma - 1.0) * std::log(p);
                                 dp[idx] += static_cast<T>(g * tile_weight[i] * d);
                             }
                         }
                     });
    }
    return loss;
}

template <typename T>
Tensor<T> partial_mse(Tape<T>* tape, const Tensor<T>& pred, std::span<const float> target,
                      std::span<const std::uint8_t> valid) {
    if (pred.rank() != 4 || pred.dim(1) != 1) throw DimensionError("partial_mse expects an N x 1 x H x W prediction");
    const std::size_t n = pred.dim(0), hw = pred.dim(2) * pred.dim(3);
    if (target.size() != n * hw || valid.size() != n * hw)
        throw DimensionError("partial_mse target/mask size does not match " + shape_string(pred.shape()));

    std::vector<double> tile_weight(n, 0.0);
    std::size_t supported = 0;
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t count = 0;
        for (std::size_t k = 0; k < hw; ++k) count += valid[i * hw + k] ? 1 : 0;
        if (count > 0) {
            tile_weight[i] = 1.0 / static_cast<double>(count);
            ++supported;
        }
    }
    if (supported == 0) throw EmptySupportError("partial_mse: no labelled pixels in batch");
    for (auto& w : tile_weight) w /= static_cast<double>(supported);

    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (tile_weight[i] == 0.0) continue;
        double tile = 0.0;
        for (std::size_t k = 0; k < hw; ++k) {
            if (!valid[i * hw + k]) continue;
            const double d = static_cast<double>(target[i * hw + k]) - static_cast<double>(pred[i * hw + k]);
            tile += d * d;
        }
        total += tile * tile_weight[i];
    }

    Tensor<T> loss({1}, static_cast<T>(total), pred.requires_grad());
    if (tape && loss.requires_grad()) {
        auto pn = pred.node_ptr(), ln = loss.node_ptr();
        std::vector<float> tgt(target.begin(), target.end());
        std::vector<std::uint8_t> mask(valid.begin(), valid.end());
        tape->record({pn}, ln,
                     [n, hw, tile_weight = std::move(tile_weight), tgt = std::move(tgt), mask = std::move(mask),
                      pn = pn.get(), ln = ln.get()]() {
                         const double g = ln->grad[0];
                         T* dp = pn->ensure_grad().data();
                         for (std::size_t i = 0; i < n; ++i) {
                             if (tile_weight[i] == 0.0) continue;
                             for (std::size_t k = 0; k < hw; ++k) {
                                 const std::size_t idx = i * hw + k;
                                 if (!mask[idx]) continue;
                                 const double d = static_cast<double>(pn->value[idx]) - static_cast<double>(tgt[idx]);
                                 dp[idx] += static_cast<T>(g * tile_weight[i] * 2.0 * d);
                             }
                         }
                     });
    }
    return loss;
}

template <typename T>
Tensor<T> total_loss(Tape<T>* tape, const Tensor<T>& l1, const Tensor<T>& l2, double lambda) {
    if (l1.numel() != 1 || l2.numel() != 1) throw DimensionError("total_loss combines two scalars");
    Tensor<T> y({1}, static_cast<T>(static_cast<double>(l1[0]) + lambda * static_cast<double>(l2[0])),
                l1.requires_grad() || l2.requires_grad());
    if (tape && y.requires_grad()) {
        auto an = l1.node_ptr(), bn = l2.node_ptr(), yn = y.node_ptr();
        tape->record({an, bn}, yn, [lambda, an = an.get(), bn = bn.get(), yn = yn.get()]() {
            const T g = yn->grad[0];
            if (an->requires_grad) an->ensure_grad()[0] += g;
            if (bn->requires_grad) bn->ensure_grad()[0] += static_cast<T>(lambda) * g;
        });
    }
    return y;
}

#define CROWNSEG_INSTANTIATE_LOSSES(T)                                                                 \
    template Tensor<T> partial_focal_loss(Tape<T>*, const Tensor<T>&, std::span<const std::int32_t>,   \
                                          double);                                                     \
    template Tensor<T> partial_mse(Tape<T>*, const Tensor<T>&, std::span<const float>,                 \
                                   std::span<const std::uint8_t>);                                     \
    template Tensor<T> total_loss(Tape<T>*, const Tensor<T>&, const Tensor<T>&, double);

CROWNSEG_INSTANTIATE_LOSSES(float)
CROWNSEG_INSTANTIATE_LOSSES(double)

#undef CROWNSEG_INSTANTIATE_LOSSES

} // namespace crownseg
