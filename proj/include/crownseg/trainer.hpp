#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "crownseg/metrics.hpp"
#include "crownseg/network.hpp"
#include "crownseg/sampler.hpp"

namespace crownseg {

struct TrainConfig {
    double lr0 = 0.1;
    double momentum = 0.9;
    double decay_rate = 0.1;
    std::size_t decay_every_epochs = 5;
    std::size_t epochs = 10;
    std::size_t batch_size = 8;
    std::size_t patience = 5;
    double min_delta = 0.9e-4;
    double val_fraction = 0.01;
    std::size_t realizations = 25;
    double weight_decay = 0.0;
    std::uint64_t seed = 1;

    void validate() const;
};

/// Staircase inverse-time decay: lr0 / (1 + decay_rate * floor(epoch / decay_every_epochs)).
double lr_at_epoch(const TrainConfig& cfg, std::size_t epoch);

/// Classical momentum: v = momentum * v + g + weight_decay * w; w -= lr * v.
void sgd_momentum_step(std::span<float> params, std::span<const float> grads, std::span<float> velocity, double lr,
                       double momentum, double weight_decay);

class SgdMomentum {
public:
    explicit SgdMomentum(const Model& model);
    /// Updates every parameter of `model` from its accumulated gradient.
    void step(Model& model, double lr, double momentum, double weight_decay);

private:
    std::vector<std::vector<float>> velocity_;
};

// Tracks the monitored metric (higher is better). An epoch improves when the
// value exceeds the best so far by more than min_delta; training stops after
// `patience` consecutive epochs without improvement.
class EarlyStopping {
public:
    EarlyStopping(std::size_t patience, double min_delta) : patience_(patience), min_delta_(min_delta) {}

    /// Returns true when `value` is a new best.
    bool update(double value);
    bool should_stop() const noexcept { return wait_ >= patience_; }
    std::optional<double> best() const noexcept { return best_; }
    std::size_t epochs_seen() const noexcept { return seen_; }
    std::size_t best_epoch() const noexcept { return best_epoch_; } // 1-based

private:
    std::size_t patience_;
    double min_delta_;
    std::optional<double> best_;
    std::size_t best_epoch_ = 0;
    std::size_t wait_ = 0;
    std::size_t seen_ = 0;
};

struct EpochRecord {
    std::size_t epoch = 0; // 1-based
    double lr = 0.0;
    double train_loss = 0.0;
    double train_seg_loss = 0.0;
    double train_dist_loss = 0.0;
    double val_loss = 0.0;
    double val_macro_f1 = 0.0;
};

struct TrainReport {
    std::uint64_t seed = 0;
    std::string config_echo; // key=value lines
    std::vector<EpochRecord> epochs;
    std::size_t stop_epoch = 0;
    std::string stop_reason; // "max_epochs" or "early_stop"
    std::size_t best_epoch = 0;
    double best_val_macro_f1 = 0.0;
    std::optional<SummaryMetrics> final_metrics;
    double wall_seconds = 0.0; // kept out of serialize() so reports compare byte for byte

    std::string serialize() const;
};

/// One batch of tiles as network input plus flattened targets.
struct Batch {
    Tensor<float> image; // N x B x T x T
    std::vector<std::int32_t> labels;
    std::vector<float> distance;
    std::vector<std::uint8_t> valid;
};

Batch make_batch(const std::vector<Tile>& tiles);

struct TrainResult {
    Model model; // best-validation checkpoint
    TrainReport report;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Trains one model. Validation uses val_fraction * tiles_per_epoch grid
/// origins held out from the sampler by seed; the model with the best validation macro-F1 is kept
/// (ties keep the earlier one).
TrainResult train_realization(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                              const SamplerConfig& sampler_cfg, const TrainingRasters& data, std::uint64_t seed,
                              const EpochCallback& on_epoch = {});

/// Scene pixels used for test metrics and how to predict them.
struct EvaluationSet {
    Raster raster;
    LabelMask reference; // -1 outside the test crowns
    std::size_t tile = 128;
    std::vector<double> overlaps{0.10, 0.30, 0.50};
};

SummaryMetrics evaluate(const TilePredictor& model, const EvaluationSet& eval);

struct Dispersion {
    double mean = 0.0;
    double stddev = 0.0; // sample standard deviation, 0 for a single value
    double min = 0.0;
    double q1 = 0.0;
    double median = 0.0;
    double q3 = 0.0;
    double max = 0.0;
};

/// Linear-interpolation quantiles over the values.
Dispersion dispersion(std::vector<double> values);

struct ExperimentResult {
    std::vector<TrainReport> reports;
    Dispersion oa, kappa, macro_ua, macro_pa, macro_f1;

    std::string summary() const;
};

/// Realization i uses the i-th seed forked from train_cfg.seed.
ExperimentResult run_experiment(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                                const SamplerConfig& sampler_cfg, const TrainingRasters& data,
                                const EvaluationSet& eval,
                                const std::function<void(std::size_t, const TrainReport&)>& on_realization = {});

std::vector<std::uint64_t> realization_seeds(std::uint64_t base, std::size_t count);

} // namespace crownseg
