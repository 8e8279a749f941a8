#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "crownseg/raster.hpp"

namespace crownseg {

/// counts[i * C + j]: reference class i predicted as class j.
struct ConfusionMatrix {
    std::size_t classes = 0;
    std::vector<std::uint64_t> counts;

    explicit ConfusionMatrix(std::size_t c = 0) : classes(c), counts(c * c, 0) {}

    std::uint64_t& operator()(std::size_t ref, std::size_t pred) { return counts[ref * classes + pred]; }
    std::uint64_t operator()(std::size_t ref, std::size_t pred) const { return counts[ref * classes + pred]; }

    std::uint64_t total() const;
    std::uint64_t row_total(std::size_t c) const;
    std::uint64_t col_total(std::size_t c) const;

    ConfusionMatrix& operator+=(const ConfusionMatrix& other);
    bool operator==(const ConfusionMatrix&) const = default;
};

/// Tallies pixels whose reference label is not -1. Predictions outside
/// [0, classes) raise ValidationError.
ConfusionMatrix confusion(std::span<const std::int32_t> pred, std::span<const std::int32_t> ref, std::size_t classes);
ConfusionMatrix confusion(const LabelMask& pred, const LabelMask& ref, std::size_t classes);

struct SummaryMetrics {
    double oa = 0.0;
    double kappa = 0.0;
    std::vector<std::optional<double>> ua; // undefined when nothing was predicted as the class
    std::vector<std::optional<double>> pa; // undefined when the class has no reference pixels
    std::vector<std::optional<double>> f1;
    double macro_ua = 0.0;
    double macro_pa = 0.0;
    double macro_f1 = 0.0;
    std::vector<std::string> warnings;
};

SummaryMetrics summary_metrics(const ConfusionMatrix& cm);

struct EntropyStats {
    Grid<double> entropy; // nats per pixel
    double mean_entropy = 0.0;
    std::size_t top_k = 3;
    std::size_t bins = 10;
    // histogram[c][r * bins + b]: correctly classified pixels of class c whose
    // rank-r probability falls into bin b of [0, 1]
    std::vector<std::vector<std::uint64_t>> histogram;
};

EntropyStats entropy_stats(const ProbabilityVolume& probs, const LabelMask& ref, std::size_t bins = 10);

/// key=value report: global metrics, then one block per class.
std::string format_metrics_report(const SummaryMetrics& m);
/// One comma-separated row of counts per reference class.
std::string format_confusion_csv(const ConfusionMatrix& cm);

} // namespace crownseg
