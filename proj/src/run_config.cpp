#include "crownseg/run_config.hpp"

#include "crownseg/binary_io.hpp"
#include "crownseg/config.hpp"
#include "crownseg/error.hpp"

namespace crownseg {

namespace {

std::string str(double v) { return format_real(v); }
std::string str(std::size_t v) { return std::to_string(v); }
std::string str(bool v) { return v ? "true" : "false"; }

} // namespace

RunConfig::RunConfig() {
    const SceneConfig sc;
    values_["scene.width"] = str(sc.width);
    values_["scene.height"] = str(sc.height);
    values_["scene.bands"] = str(sc.bands);
    values_["scene.classes"] = str(sc.classes);
    values_["scene.crowns"] = str(sc.crowns);
    values_["scene.radius_min"] = str(sc.radius_min);
    values_["scene.radius_max"] = str(sc.radius_max);
    values_["scene.crown_gap"] = str(sc.crown_gap);
    values_["scene.separation"] = str(sc.separation);
    values_["scene.crown_jitter"] = str(sc.crown_jitter);
    values_["scene.noise_sigma"] = str(sc.noise_sigma);
    values_["scene.falloff"] = str(sc.falloff);
    values_["scene.labeled_fraction"] = str(sc.labeled_fraction);

    const ModelConfig mc;
    values_["model.base_filters"] = str(mc.base_filters);
    values_["model.atrous_rates"] = join_sizes(mc.atrous_rates);
    values_["model.dropout"] = str(mc.dropout_rate);
    values_["model.mode"] = to_string(mc.mode);
    values_["model.lambda"] = str(mc.lambda);
    values_["model.gamma"] = str(mc.gamma);
    values_["model.bn_epsilon"] = str(mc.bn_epsilon);
    values_["model.bn_momentum"] = str(mc.bn_momentum);

    const TrainConfig tc;
    values_["train.lr0"] = str(tc.lr0);
    values_["train.momentum"] = str(tc.momentum);
    values_["train.decay_rate"] = str(tc.decay_rate);
    values_["train.decay_every_epochs"] = str(tc.decay_every_epochs);
    values_["train.epochs"] = str(tc.epochs);
    values_["train.batch_size"] = str(tc.batch_size);
    values_["train.patience"] = str(tc.patience);
    values_["train.min_delta"] = str(tc.min_delta);
    values_["train.val_fraction"] = str(tc.val_fraction);
    values_["train.realizations"] = str(tc.realizations);
    values_["train.weight_decay"] = str(tc.weight_decay);

    const SamplerConfig pc;
    values_["sampler.tile_size"] = str(pc.tile_size);
    values_["sampler.grid_overlap"] = str(pc.grid_overlap);
    values_["sampler.min_coverage"] = str(pc.min_coverage);
    values_["sampler.tiles_per_epoch"] = str(pc.tiles_per_epoch);
    values_["sampler.balance"] = str(pc.balance);

    const DistanceTargetOptions dt;
    values_["targets.sigma"] = str(dt.sigma);
    values_["targets.radius"] = std::to_string(dt.radius);

    values_["predict.tile"] = "128";
    values_["predict.overlaps"] = "0.1,0.3,0.5";
    values_["seed"] = "1";
}

void RunConfig::set(const std::string& key, const std::string& value) {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown configuration key '" + key + "'");
    it->second = value;
}

const std::string& RunConfig::get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown configuration key '" + key + "'");
    return it->second;
}

void RunConfig::merge_text(const std::string& text, const std::string& source) {
    for (const auto& [k, v] : parse_key_values(text, source)) set(k, v);
}

void RunConfig::merge_file(const std::string& path) {
    const auto bytes = read_file_bytes(path);
    merge_text(std::string(bytes.begin(), bytes.end()), path);
}

void RunConfig::merge_assignment(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not of the form key=value");
    set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

SceneConfig RunConfig::scene() const {
    SceneConfig c;
    c.width = parse_size(get("scene.width"), "scene.width");
    c.height = parse_size(get("scene.height"), "scene.height");
    c.bands = parse_size(get("scene.bands"), "scene.bands");
    c.classes = parse_size(get("scene.classes"), "scene.classes");
    c.crowns = parse_size(get("scene.crowns"), "scene.crowns");
    c.radius_min = parse_double(get("scene.radius_min"), "scene.radius_min");
    c.radius_max = parse_double(get("scene.radius_max"), "scene.radius_max");
    c.crown_gap = parse_double(get("scene.crown_gap"), "scene.crown_gap");
    c.separation = parse_double(get("scene.separation"), "scene.separation");
    c.crown_jitter = parse_double(get("scene.crown_jitter"), "scene.crown_jitter");
    c.noise_sigma = parse_double(get("scene.noise_sigma"), "scene.noise_sigma");
    c.falloff = parse_double(get("scene.falloff"), "scene.falloff");
    c.labeled_fraction = parse_double(get("scene.labeled_fraction"), "scene.labeled_fraction");
    c.seed = seed();
    c.validate();
    return c;
}

ModelConfig RunConfig::model() const {
    ModelConfig c;
    c.bands = parse_size(get("scene.bands"), "scene.bands");
    c.classes = parse_size(get("scene.classes"), "scene.classes");
    c.base_filters = parse_size(get("model.base_filters"), "model.base_filters");
    c.atrous_rates = parse_size_list(get("model.atrous_rates"), "model.atrous_rates");
    c.dropout_rate = parse_double(get("model.dropout"), "model.dropout");
    c.mode = parse_task_mode(get("model.mode"));
    c.lambda = parse_double(get("model.lambda"), "model.lambda");
    c.gamma = parse_double(get("model.gamma"), "model.gamma");
    c.bn_epsilon = parse_double(get("model.bn_epsilon"), "model.bn_epsilon");
    c.bn_momentum = parse_double(get("model.bn_momentum"), "model.bn_momentum");
    c.validate();
    return c;
}

TrainConfig RunConfig::train() const {
    TrainConfig c;
    c.lr0 = parse_double(get("train.lr0"), "train.lr0");
    c.momentum = parse_double(get("train.momentum"), "train.momentum");
    c.decay_rate = parse_double(get("train.decay_rate"), "train.decay_rate");
    c.decay_every_epochs = parse_size(get("train.decay_every_epochs"), "train.decay_every_epochs");
    c.epochs = parse_size(get("train.epochs"), "train.epochs");
    c.batch_size = parse_size(get("train.batch_size"), "train.batch_size");
    c.patience = parse_size(get("train.patience"), "train.patience");
    c.min_delta = parse_double(get("train.min_delta"), "train.min_delta");
    c.val_fraction = parse_double(get("train.val_fraction"), "train.val_fraction");
    c.realizations = parse_size(get("train.realizations"), "train.realizations");
    c.weight_decay = parse_double(get("train.weight_decay"), "train.weight_decay");
    c.seed = seed();
    c.validate();
    return c;
}

SamplerConfig RunConfig::sampler() const {
    SamplerConfig c;
    c.tile_size = parse_size(get("sampler.tile_size"), "sampler.tile_size");
    c.grid_overlap = parse_double(get("sampler.grid_overlap"), "sampler.grid_overlap");
    c.min_coverage = parse_double(get("sampler.min_coverage"), "sampler.min_coverage");
    c.tiles_per_epoch = parse_size(get("sampler.tiles_per_epoch"), "sampler.tiles_per_epoch");
    c.balance = parse_bool(get("sampler.balance"), "sampler.balance");
    c.validate();
    return c;
}

DistanceTargetOptions RunConfig::targets() const {
    DistanceTargetOptions o;
    o.sigma = parse_double(get("targets.sigma"), "targets.sigma");
    o.radius = static_cast<int>(parse_int(get("targets.radius"), "targets.radius"));
    if (o.sigma < 0.0 || o.radius < 0) throw ConfigError("targets.sigma and targets.radius must be non-negative");
    return o;
}

std::size_t RunConfig::predict_tile() const { return parse_size(get("predict.tile"), "predict.tile"); }

std::vector<double> RunConfig::predict_overlaps() const {
    return parse_double_list(get("predict.overlaps"), "predict.overlaps");
}

std::uint64_t RunConfig::seed() const { return parse_u64(get("seed"), "seed"); }

std::string RunConfig::echo() const {
    std::string s;
    for (const auto& [k, v] : values_) s += k + " = " + v + "\n";
    return s;
}

} // namespace crownseg
