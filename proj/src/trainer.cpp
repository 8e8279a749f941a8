#include "crownseg/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "crownseg/binary_io.hpp"
#include "crownseg/error.hpp"
#include "crownseg/inference.hpp"
#include "crownseg/losses.hpp"

namespace crownseg {

void TrainConfig::validate() const {
    if (!(lr0 > 0.0)) throw ParameterError("lr0 must be positive");
    if (momentum < 0.0 || momentum >= 1.0) throw ParameterError("momentum must lie in [0, 1)");
    if (decay_rate < 0.0) throw ParameterError("decay_rate must be non-negative");
    if (decay_every_epochs == 0) throw ParameterError("decay_every_epochs must be positive");
    if (epochs == 0) throw ParameterError("epochs must be positive");
    if (batch_size == 0) throw ParameterError("batch_size must be positive");
    if (min_delta < 0.0) throw ParameterError("min_delta must be non-negative");
    if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ParameterError("val_fraction must lie in (0, 1)");
    if (realizations == 0) throw ParameterError("realizations must be at least 1");
    if (weight_decay < 0.0) throw ParameterError("weight_decay must be non-negative");
}

double lr_at_epoch(const TrainConfig& cfg, std::size_t epoch) {
    const auto steps = static_cast<double>(epoch / cfg.decay_every_epochs);
    return cfg.lr0 / (1.0 + cfg.decay_rate * steps);
}

void sgd_momentum_step(std::span<float> params, std::span<const float> grads, std::span<float> velocity, double lr,
                       double momentum, double weight_decay) {
    if (params.size() != grads.size() || params.size() != velocity.size())
        throw DimensionError("parameter, gradient and velocity sizes differ");
    const auto m = static_cast<float>(momentum), wd = static_cast<float>(weight_decay), a = static_cast<float>(lr);
    for (std::size_t i = 0; i < params.size(); ++i) {
        velocity[i] = m * velocity[i] + grads[i] + wd * params[i];
        params[i] -= a * velocity[i];
    }
}

SgdMomentum::SgdMomentum(const Model& model) {
    for (const auto& p : model.parameters()) velocity_.emplace_back(p.tensor.numel(), 0.0f);
}

void SgdMomentum::step(Model& model, double lr, double momentum, double weight_decay) {
    const auto& params = model.parameters();
    if (params.size() != velocity_.size()) throw StateError("optimizer was built for a different model");
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto t = params[i].tensor; // shallow handle
        if (!t.has_grad()) continue;
        sgd_momentum_step(t.values(), t.grad(), velocity_[i], lr, momentum, weight_decay);
    }
}

bool EarlyStopping::update(double value) {
    ++seen_;
    if (!best_ || value > *best_ + min_delta_) {
        best_ = value;
        best_epoch_ = seen_;
        wait_ = 0;
        return true;
    }
    ++wait_;
    return false;
}

std::string TrainReport::serialize() const {
    std::string s;
    s += "seed=" + std::to_string(seed) + "\n";
    s += "stop_epoch=" + std::to_string(stop_epoch) + "\n";
    s += "stop_reason=" + stop_reason + "\n";
    s += "best_epoch=" + std::to_string(best_epoch) + "\n";
    s += "best_val_macro_f1=" + format_real(best_val_macro_f1) + "\n";
    s += "\n[config]\n" + config_echo;
    if (!config_echo.empty() && config_echo.back() != '\n') s += '\n';
    for (const auto& e : epochs) {
        s += "\n[epoch " + std::to_string(e.epoch) + "]\n";
        s += "lr=" + format_real(e.lr) + "\n";
        s += "train_loss=" + format_real(e.train_loss) + "\n";
        s += "train_seg_loss=" + format_real(e.train_seg_loss) + "\n";
        s += "train_dist_loss=" + format_real(e.train_dist_loss) + "\n";
        s += "val_loss=" + format_real(e.val_loss) + "\n";
        s += "val_macro_f1=" + format_real(e.val_macro_f1) + "\n";
    }
    if (final_metrics) s += "\n[test]\n" + format_metrics_report(*final_metrics);
    return s;
}

Batch make_batch(const std::vector<Tile>& tiles) {
    if (tiles.empty()) throw ParameterError("a batch needs at least one tile");
    const auto T = tiles[0].size, B = tiles[0].bands, N = tiles.size();
    Batch b;
    std::vector<float> image;
    image.reserve(N * B * T * T);
    for (const auto& t : tiles) {
        if (t.size != T || t.bands != B) throw DimensionError("tiles in a batch must share size and band count");
        image.insert(image.end(), t.image.begin(), t.image.end());
        b.labels.insert(b.labels.end(), t.labels.begin(), t.labels.end());
        b.distance.insert(b.distance.end(), t.distance.begin(), t.distance.end());
    }
    b.image = Tensor<float>({N, B, T, T}, std::move(image));
    b.valid.resize(b.labels.size());
    for (std::size_t i = 0; i < b.labels.size(); ++i) b.valid[i] = b.labels[i] != kUnlabeled ? 1 : 0;
    return b;
}

namespace {

struct ValidationResult {
    double loss = 0.0;
    double macro_f1 = 0.0;
};

ValidationResult validate_model(const Model& model, const std::vector<Tile>& tiles, std::size_t batch_size) {
    const auto& cfg = model.config();
    ConfusionMatrix cm(cfg.classes);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < tiles.size(); start += batch_size) {
        const auto end = std::min(tiles.size(), start + batch_size);
        const std::vector<Tile> chunk(tiles.begin() + static_cast<std::ptrdiff_t>(start),
                                      tiles.begin() + static_cast<std::ptrdiff_t>(end));
        const auto batch = make_batch(chunk);
        const auto pack = model.predict(batch.image);
        double loss = partial_focal_loss<float>(nullptr, pack.probs, batch.labels, cfg.gamma)[0];
        if (pack.distance) loss += cfg.lambda * partial_mse<float>(nullptr, *pack.distance, batch.distance, batch.valid)[0];
        loss_sum += loss;
        ++batches;

        const auto N = chunk.size(), C = cfg.classes, T = chunk[0].size, plane = T * T;
        const auto p = pack.probs.values();
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t i = 0; i < plane; ++i) {
                const auto ref = batch.labels[n * plane + i];
                if (ref == kUnlabeled) continue;
                std::size_t best = 0;
                for (std::size_t c = 1; c < C; ++c)
                    if (p[(n * C + c) * plane + i] > p[(n * C + best) * plane + i]) best = c;
                ++cm(static_cast<std::size_t>(ref), best);
            }
    }
    ValidationResult r;
    r.loss = loss_sum / static_cast<double>(batches);
    r.macro_f1 = summary_metrics(cm).macro_f1;
    return r;
}

} // namespace

TrainResult train_realization(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                              const SamplerConfig& sampler_cfg, const TrainingRasters& data, std::uint64_t seed,
                              const EpochCallback& on_epoch) {
    model_cfg.validate();
    train_cfg.validate();
    sampler_cfg.validate();
    if (data.classes != model_cfg.classes) throw ParameterError("training data and model disagree on class count");
    if (data.image.bands != model_cfg.bands) throw ParameterError("training data and model disagree on band count");
    if (sampler_cfg.tile_size % 4 != 0) throw DimensionError("tile size must be divisible by 4");

    const auto start = std::chrono::steady_clock::now();
    Rng rng(seed);
    Model model = Model::build(model_cfg, rng.fork_seed());
    Rng sample_rng(rng.fork_seed());
    Rng dropout_rng(rng.fork_seed());

    TileSampler sampler(data, sampler_cfg);
    std::vector<Tile> val_tiles;
    const auto n_val = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(train_cfg.val_fraction * static_cast<double>(sampler_cfg.tiles_per_epoch))));
    for (const auto& o : sampler.hold_out(n_val, sample_rng))
        val_tiles.push_back(crop_tile(data, o, sampler_cfg.tile_size));

    SgdMomentum opt(model);
    EarlyStopping stopper(train_cfg.patience, train_cfg.min_delta);
    TrainResult result{model.clone(), {}};
    auto& report = result.report;
    report.seed = seed;
    report.stop_reason = "max_epochs";

    const bool multi = model_cfg.mode == TaskMode::multi_task;
    const std::size_t steps = (sampler_cfg.tiles_per_epoch + train_cfg.batch_size - 1) / train_cfg.batch_size;
    for (std::size_t epoch = 0; epoch < train_cfg.epochs; ++epoch) {
        EpochRecord rec;
        rec.epoch = epoch + 1;
        rec.lr = lr_at_epoch(train_cfg, epoch);
        std::size_t drawn = 0;
        for (std::size_t step = 0; step < steps; ++step) {
            const auto n = std::min(train_cfg.batch_size, sampler_cfg.tiles_per_epoch - drawn);
            drawn += n;
            std::vector<Tile> tiles;
            for (std::size_t i = 0; i < n; ++i) tiles.push_back(augment(sampler.draw(sample_rng), sample_rng));
            const auto batch = make_batch(tiles);

            Tape<float> tape;
            model.zero_grad();
            const auto pack = model.forward(batch.image, Mode::train, dropout_rng, &tape);
            auto seg = partial_focal_loss(&tape, pack.probs, batch.labels, model_cfg.gamma);
            Tensor<float> loss = seg;
            double dist_value = 0.0;
            if (multi) {
                auto dist = partial_mse(&tape, *pack.distance, batch.distance, batch.valid);
                dist_value = dist[0];
                loss = total_loss(&tape, seg, dist, model_cfg.lambda);
            }
            if (!std::isfinite(loss[0]))
                throw TrainingDivergedError("non-finite loss in epoch " + std::to_string(epoch + 1) + ", step " +
                                            std::to_string(step + 1));
            tape.backward(loss);
            opt.step(model, rec.lr, train_cfg.momentum, train_cfg.weight_decay);

            rec.train_loss += loss[0];
            rec.train_seg_loss += seg[0];
            rec.train_dist_loss += dist_value;
        }
        rec.train_loss /= static_cast<double>(steps);
        rec.train_seg_loss /= static_cast<double>(steps);
        rec.train_dist_loss /= static_cast<double>(steps);

        const auto val = validate_model(model, val_tiles, train_cfg.batch_size);
        rec.val_loss = val.loss;
        rec.val_macro_f1 = val.macro_f1;
        report.epochs.push_back(rec);
        if (on_epoch) on_epoch(rec);

        if (stopper.update(val.macro_f1)) result.model.load_state_from(model);
        if (stopper.should_stop() && epoch + 1 < train_cfg.epochs) {
            report.stop_reason = "early_stop";
            break;
        }
    }
    report.stop_epoch = report.epochs.size();
    report.best_epoch = stopper.best_epoch();
    report.best_val_macro_f1 = stopper.best().value_or(0.0);
    report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return result;
}

SummaryMetrics evaluate(const TilePredictor& model, const EvaluationSet& eval) {
    const auto pred = fused_predict(model, eval.raster, eval.tile, eval.overlaps);
    return summary_metrics(confusion(argmax_map(pred.probs), eval.reference, model.classes()));
}

Dispersion dispersion(std::vector<double> values) {
    if (values.empty()) throw ParameterError("dispersion of an empty series");
    std::sort(values.begin(), values.end());
    const auto n = values.size();
    auto quantile = [&](double q) {
        const double pos = q * static_cast<double>(n - 1);
        const auto lo = static_cast<std::size_t>(std::floor(pos));
        const auto hi = std::min(n - 1, lo + 1);
        return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
    };
    Dispersion d;
    double sum = 0.0;
    for (double v : values) sum += v;
    d.mean = sum / static_cast<double>(n);
    double ss = 0.0;
    for (double v : values) ss += (v - d.mean) * (v - d.mean);
    d.stddev = n > 1 ? std::sqrt(ss / static_cast<double>(n - 1)) : 0.0;
    d.min = values.front();
    d.max = values.back();
    d.q1 = quantile(0.25);
    d.median = quantile(0.5);
    d.q3 = quantile(0.75);
    return d;
}

std::string ExperimentResult::summary() const {
    std::string s = "realizations=" + std::to_string(reports.size()) + "\n";
    auto block = [&](const std::string& name, const Dispersion& d) {
        s += "\n[" + name + "]\n";
        s += "mean=" + format_real(d.mean) + "\n";
        s += "stddev=" + format_real(d.stddev) + "\n";
        s += "min=" + format_real(d.min) + "\n";
        s += "q1=" + format_real(d.q1) + "\n";
        s += "median=" + format_real(d.median) + "\n";
        s += "q3=" + format_real(d.q3) + "\n";
        s += "max=" + format_real(d.max) + "\n";
    };
    block("oa", oa);
    block("kappa", kappa);
    block("macro_ua", macro_ua);
    block("macro_pa", macro_pa);
    block("macro_f1", macro_f1);
    return s;
}

std::vector<std::uint64_t> realization_seeds(std::uint64_t base, std::size_t count) {
    Rng rng(base);
    std::vector<std::uint64_t> seeds(count);
    for (auto& s : seeds) s = rng.fork_seed();
    return seeds;
}

ExperimentResult run_experiment(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                                const SamplerConfig& sampler_cfg, const TrainingRasters& data,
                                const EvaluationSet& eval,
                                const std::function<void(std::size_t, const TrainReport&)>& on_realization) {
    train_cfg.validate();
    ExperimentResult out;
    std::vector<double> oa, kappa, ua, pa, f1;
    const auto seeds = realization_seeds(train_cfg.seed, train_cfg.realizations);
    for (std::size_t i = 0; i < seeds.size(); ++i) {
        auto run = train_realization(model_cfg, train_cfg, sampler_cfg, data, seeds[i]);
        run.report.final_metrics = evaluate(run.model, eval);
        const auto& m = *run.report.final_metrics;
        oa.push_back(m.oa);
        kappa.push_back(m.kappa);
        ua.push_back(m.macro_ua);
        pa.push_back(m.macro_pa);
        f1.push_back(m.macro_f1);
        if (on_realization) on_realization(i, run.report);
        out.reports.push_back(std::move(run.report));
    }
    out.oa = dispersion(oa);
    out.kappa = dispersion(kappa);
    out.macro_ua = dispersion(ua);
    out.macro_pa = dispersion(pa);
    out.macro_f1 = dispersion(f1);
    return out;
}

} // namespace crownseg
