#include "crownseg/network.hpp"

#include <cmath>
#include <map>
#include <sstream>

#include "crownseg/binary_io.hpp"
#include "crownseg/config.hpp"

namespace crownseg {

std::string to_string(TaskMode mode) { return mode == TaskMode::single_task ? "single" : "multi"; }

TaskMode parse_task_mode(const std::string& text) {
    if (text == "single" || text == "single_task") return TaskMode::single_task;
    if (text == "multi" || text == "multi_task") return TaskMode::multi_task;
    throw ConfigError("unknown task mode '" + text + "' (expected single or multi)");
}

void ModelConfig::validate() const {
    if (bands == 0) throw ParameterError("model bands must be positive");
    if (classes < 2) throw ParameterError("model needs at least two classes");
    if (base_filters == 0) throw ParameterError("base_filters must be positive");
    if (atrous_rates.empty()) throw ParameterError("atrous_rates must not be empty");
    for (auto r : atrous_rates)
        if (r == 0) throw ParameterError("atrous rates must be strictly positive");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ParameterError("dropout_rate must lie in [0, 1)");
    if (!(gamma >= 0.0)) throw ParameterError("gamma must be non-negative");
    if (!std::isfinite(lambda) || lambda < 0.0) throw ParameterError("lambda must be finite and non-negative");
    if (!(bn_epsilon > 0.0)) throw ParameterError("bn_epsilon must be positive");
    if (!(bn_momentum >= 0.0 && bn_momentum < 1.0)) throw ParameterError("bn_momentum must lie in [0, 1)");
}

std::string ModelConfig::serialize() const {
    std::ostringstream os;
    os << "bands=" << bands << '\n';
    os << "classes=" << classes << '\n';
    os << "base_filters=" << base_filters << '\n';
    os << "atrous_rates=" << join_sizes(atrous_rates) << '\n';
    os << "dropout_rate=" << format_real(dropout_rate) << '\n';
    os << "mode=" << to_string(mode) << '\n';
    os << "lambda=" << format_real(lambda) << '\n';
    os << "gamma=" << format_real(gamma) << '\n';
    os << "bn_epsilon=" << format_real(bn_epsilon) << '\n';
    os << "bn_momentum=" << format_real(bn_momentum) << '\n';
    return os.str();
}

ModelConfig ModelConfig::deserialize(const std::string& text) {
    ModelConfig cfg;
    const auto kv = parse_key_values(text, "checkpoint config");
    for (const auto& [key, value] : kv) {
        if (key == "bands") cfg.bands = parse_size(value, key);
        else if (key == "classes") cfg.classes = parse_size(value, key);
        else if (key == "base_filters") cfg.base_filters = parse_size(value, key);
        else if (key == "atrous_rates") cfg.atrous_rates = parse_size_list(value, key);
        else if (key == "dropout_rate") cfg.dropout_rate = parse_double(value, key);
        else if (key == "mode") cfg.mode = parse_task_mode(value);
        else if (key == "lambda") cfg.lambda = parse_double(value, key);
        else if (key == "gamma") cfg.gamma = parse_double(value, key);
        else if (key == "bn_epsilon") cfg.bn_epsilon = parse_double(value, key);
        else if (key == "bn_momentum") cfg.bn_momentum = parse_double(value, key);
        else throw FormatError("unknown model config key '" + key + "'");
    }
    cfg.validate();
    return cfg;
}

namespace {

Model::Conv make_conv(std::size_t cin, std::size_t cout, std::size_t k, Conv2dOptions opts, Rng& rng) {
    Model::Conv c;
    c.weight = Tensor<float>({cout, cin, k, k}, 0.0f, true);
    c.bias = Tensor<float>({cout}, 0.0f, true);
    c.opts = opts;
    // He-style fan-in scaling
    const double stddev = std::sqrt(2.0 / static_cast<double>(cin * k * k));
    for (auto& v : c.weight.values()) v = static_cast<float>(rng.normal(0.0, stddev));
    return c;
}

Model::Norm make_norm(std::size_t channels) {
    return Model::Norm{Tensor<float>({channels}, 1.0f, true), Tensor<float>({channels}, 0.0f, true),
                       BatchNormState<float>::fresh(channels)};
}

Model::ConvBlock make_conv_block(std::size_t cin, std::size_t cout, Rng& rng) {
    return Model::ConvBlock{make_conv(cin, cout, 3, {}, rng), make_norm(cout)};
}

Tensor<float> apply(Tape<float>* tape, const Model::Conv& c, const Tensor<float>& x) {
    return conv2d(tape, x, c.weight, c.bias, c.opts);
}

} // namespace

template <typename Self>
Tensor<float> apply_norm(Self& self, Tape<float>* tape, std::conditional_t<std::is_const_v<Self>, const Model::Norm, Model::Norm>& n,
                         const Tensor<float>& x, Mode mode) {
    BatchNormOptions opts{self.config().bn_epsilon, self.config().bn_momentum};
    if constexpr (std::is_const_v<Self>) {
        if (mode != Mode::eval) throw StateError("a const model can only run in eval mode");
        return batch_norm_eval(tape, x, n.gamma, n.beta, n.state, opts);
    } else {
        return batch_norm(tape, x, n.gamma, n.beta, n.state, mode, opts);
    }
}

template <typename Self>
EncoderFeatures run_encoder(Self& self, const Tensor<float>& x, Mode mode, Tape<float>* tape) {
    const auto& cfg = self.cfg_;
    if (x.rank() != 4 || x.dim(1) != cfg.bands)
        throw DimensionError("model input must be N x " + std::to_string(cfg.bands) + " x H x W, got " +
                             shape_string(x.shape()));
    if (x.dim(2) % 4 != 0 || x.dim(3) % 4 != 0)
        throw DimensionError("model input extents must be divisible by 4, got " + shape_string(x.shape()));

    EncoderFeatures f;
    f.stem = apply(tape, self.stem_, x);
    Tensor<float> h = f.stem;
    for (std::size_t i = 0; i < self.blocks_.size(); ++i) {
        auto& blk = self.blocks_[i];
        const Tensor<float> in = h;
        Tensor<float> r = elu(tape, apply_norm(self, tape, blk.bn1, in, mode));
        r = apply(tape, blk.conv1, r);
        r = elu(tape, apply_norm(self, tape, blk.bn2, r, mode));
        r = apply(tape, blk.conv2, r);
        Tensor<float> shortcut = in;
        if (blk.projection) {
            shortcut = apply(tape, *blk.projection, in);
        } else if (blk.pad_channels > 0) {
            Tensor<float> zeros({in.dim(0), blk.pad_channels, in.dim(2), in.dim(3)}, 0.0f);
            shortcut = concat_channels<float>(tape, {in, zeros});
        }
        h = add(tape, r, shortcut);
        if (i == 0) f.block1 = h;
    }
    f.output = h;
    return f;
}

template <typename Self>
PredictionPack run_network(Self& self, const Tensor<float>& x, Mode mode, Rng* rng, Tape<float>* tape) {
    const auto& cfg = self.cfg_;
    const EncoderFeatures f = run_encoder(self, x, mode, tape);
    const std::size_t h4 = f.output.dim(2), w4 = f.output.dim(3);

    // ASPP: image pooling, 1x1 conv and the atrous branches, concatenated
    std::vector<Tensor<float>> branches;
    {
        Tensor<float> pooled = elu(tape, apply(tape, self.aspp_pool_, global_avg_pool(tape, f.output)));
        branches.push_back(resize_bilinear(tape, pooled, h4, w4));
    }
    branches.push_back(apply(tape, self.aspp_pointwise_, f.output));
    for (const auto& conv : self.aspp_atrous_) branches.push_back(apply(tape, conv, f.output));
    Tensor<float> s = concat_channels<float>(tape, branches);
    s = elu(tape, apply_norm(self, tape, self.aspp_norm_, s, mode));

    auto conv_block = [&](auto& cb, const Tensor<float>& in, const Tensor<float>& skip) {
        Tensor<float> y = elu(tape, apply_norm(self, tape, cb.bn, apply(tape, cb.conv, in), mode));
        y = bilinear_upsample(tape, y, 2);
        return concat_channels<float>(tape, {y, skip});
    };

    s = conv_block(self.seg_cb1_, s, f.block1);
    s = conv_block(self.seg_cb2_, s, f.stem);
    if (mode == Mode::train) {
        if (!rng) throw StateError("train-mode forward needs a random generator for dropout");
        s = dropout(tape, s, cfg.dropout_rate, mode, *rng);
    }
    PredictionPack out;
    out.probs = softmax_channels(tape, apply(tape, self.classifier_, s));

    if (cfg.mode == TaskMode::multi_task) {
        Tensor<float> d = conv_block(self.dist_cb1_, f.output, f.block1);
        d = conv_block(self.dist_cb2_, d, f.stem);
        out.distance = sigmoid(tape, apply(tape, self.dist_head_, d));
    }
    return out;
}

Model Model::build(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Model m;
    m.cfg_ = cfg;
    Rng rng(seed);
    const std::size_t f0 = cfg.base_filters;
    const std::size_t aspp_width = 4 * f0;
    const std::size_t d1 = 2 * f0, d2 = f0;

    m.stem_ = make_conv(cfg.bands, f0, 3, {}, rng);
    m.encoder_convs_ = 1;
    const std::size_t widths[3] = {f0, 2 * f0, 4 * f0};
    const std::size_t strides[3] = {2, 2, 1};
    std::size_t cin = f0;
    for (std::size_t i = 0; i < 3; ++i) {
        ResBlock blk;
        const std::size_t cout = widths[i];
        blk.bn1 = make_norm(cin);
        blk.conv1 = make_conv(cin, cout, 3, {strides[i], 1, Padding::same_zero}, rng);
        blk.bn2 = make_norm(cout);
        blk.conv2 = make_conv(cout, cout, 3, {}, rng);
        m.encoder_convs_ += 2;
        if (strides[i] != 1) {
            blk.projection = make_conv(cin, cout, 1, {strides[i], 1, Padding::same_zero}, rng);
            ++m.encoder_convs_;
        } else {
            blk.pad_channels = cout - cin;
        }
        m.blocks_.push_back(std::move(blk));
        cin = cout;
    }

    m.aspp_pool_ = make_conv(4 * f0, aspp_width, 1, {}, rng);
    m.aspp_pointwise_ = make_conv(4 * f0, aspp_width, 1, {}, rng);
    for (auto r : cfg.atrous_rates)
        m.aspp_atrous_.push_back(make_conv(4 * f0, aspp_width, 3, {1, r, Padding::same_zero}, rng));
    const std::size_t aspp_out = aspp_width * (2 + cfg.atrous_rates.size());
    m.aspp_norm_ = make_norm(aspp_out);
    m.seg_cb1_ = make_conv_block(aspp_out, d1, rng);
    m.seg_cb2_ = make_conv_block(d1 + f0, d2, rng);
    m.classifier_ = make_conv(d2 + f0, cfg.classes, 1, {}, rng);

    if (cfg.mode == TaskMode::multi_task) {
        m.dist_cb1_ = make_conv_block(4 * f0, d1, rng);
        m.dist_cb2_ = make_conv_block(d1 + f0, d2, rng);
        m.dist_head_ = make_conv(d2 + f0, 1, 3, {}, rng);
    }
    m.rebuild_registry();
    return m;
}

void Model::register_conv(const std::string& name, ParamGroup group, Conv& conv) {
    params_.push_back({name + ".weight", group, conv.weight});
    params_.push_back({name + ".bias", group, conv.bias});
}

void Model::register_norm(const std::string& name, ParamGroup group, Norm& norm) {
    params_.push_back({name + ".gamma", group, norm.gamma});
    params_.push_back({name + ".beta", group, norm.beta});
    buffers_.push_back({name + ".running_mean", group, norm.state.running_mean});
    buffers_.push_back({name + ".running_var", group, norm.state.running_var});
}

void Model::rebuild_registry() {
    params_.clear();
    buffers_.clear();
    register_conv("encoder.stem", ParamGroup::encoder, stem_);
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        const std::string p = "encoder.block" + std::to_string(i + 1);
        auto& b = blocks_[i];
        register_norm(p + ".bn1", ParamGroup::encoder, b.bn1);
        register_conv(p + ".conv1", ParamGroup::encoder, b.conv1);
        register_norm(p + ".bn2", ParamGroup::encoder, b.bn2);
        register_conv(p + ".conv2", ParamGroup::encoder, b.conv2);
        if (b.projection) register_conv(p + ".projection", ParamGroup::encoder, *b.projection);
    }
    register_conv("seg.aspp.pool", ParamGroup::seg_decoder, aspp_pool_);
    register_conv("seg.aspp.pointwise", ParamGroup::seg_decoder, aspp_pointwise_);
    for (std::size_t i = 0; i < aspp_atrous_.size(); ++i)
        register_conv("seg.aspp.atrous" + std::to_string(cfg_.atrous_rates[i]), ParamGroup::seg_decoder,
                      aspp_atrous_[i]);
    register_norm("seg.aspp.bn", ParamGroup::seg_decoder, aspp_norm_);
    register_conv("seg.cb1.conv", ParamGroup::seg_decoder, seg_cb1_.conv);
    register_norm("seg.cb1.bn", ParamGroup::seg_decoder, seg_cb1_.bn);
    register_conv("seg.cb2.conv", ParamGroup::seg_decoder, seg_cb2_.conv);
    register_norm("seg.cb2.bn", ParamGroup::seg_decoder, seg_cb2_.bn);
    register_conv("seg.classifier", ParamGroup::seg_decoder, classifier_);
    if (cfg_.mode == TaskMode::multi_task) {
        register_conv("dist.cb1.conv", ParamGroup::dist_decoder, dist_cb1_.conv);
        register_norm("dist.cb1.bn", ParamGroup::dist_decoder, dist_cb1_.bn);
        register_conv("dist.cb2.conv", ParamGroup::dist_decoder, dist_cb2_.conv);
        register_norm("dist.cb2.bn", ParamGroup::dist_decoder, dist_cb2_.bn);
        register_conv("dist.head", ParamGroup::dist_decoder, dist_head_);
    }
}

PredictionPack Model::forward(const Tensor<float>& x, Mode mode, Rng& rng, Tape<float>* tape) {
    return run_network(*this, x, mode, &rng, tape);
}

PredictionPack Model::predict(const Tensor<float>& x) const { return run_network(*this, x, Mode::eval, nullptr, nullptr); }

EncoderFeatures Model::encode(const Tensor<float>& x) const { return run_encoder(*this, x, Mode::eval, nullptr); }

std::size_t Model::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.tensor.numel();
    return n;
}

void Model::zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
}

Model Model::clone() const {
    Model m = build(cfg_, 0);
    m.load_state_from(*this);
    return m;
}

void Model::load_state_from(const Model& other) {
    if (!(other.cfg_ == cfg_)) throw StateError("load_state_from: model configurations differ");
    auto copy = [](std::vector<NamedTensor>& dst, const std::vector<NamedTensor>& src) {
        for (std::size_t i = 0; i < dst.size(); ++i) {
            auto d = dst[i].tensor.values();
            auto s = src[i].tensor.values();
            std::copy(s.begin(), s.end(), d.begin());
        }
    };
    copy(params_, other.params_);
    copy(buffers_, other.buffers_);
}

namespace {

constexpr std::string_view kCheckpointMagic = "CKP1";

void write_tensor(ByteWriter& w, const Tensor<float>& t) {
    w.u8(static_cast<std::uint8_t>(t.rank()));
    for (auto e : t.shape()) w.u32(static_cast<std::uint32_t>(e));
    for (auto v : t.values()) w.f32(v);
}

void read_tensor(ByteReader& r, Tensor<float>& t, const std::string& name) {
    const std::size_t at = r.offset();
    const std::size_t rank = r.u8();
    Shape shape(rank);
    for (auto& e : shape) e = r.u32();
    if (shape != t.shape())
        throw FormatError("checkpoint tensor '" + name + "' at offset " + std::to_string(at) + " has shape " +
                          shape_string(shape) + ", expected " + shape_string(t.shape()));
    r.need(4 * t.numel());
    for (auto& v : t.values()) v = r.f32();
}

} // namespace

std::vector<char> encode_checkpoint(const Model& model) {
    ByteWriter w;
    w.bytes(kCheckpointMagic);
    w.u16(kCheckpointVersion);
    const std::string cfg = model.config().serialize();
    w.u32(static_cast<std::uint32_t>(cfg.size()));
    w.bytes(cfg);
    for (const auto& p : model.parameters()) write_tensor(w, p.tensor);
    for (const auto& b : model.buffers()) write_tensor(w, b.tensor);
    return w.buffer();
}

Model decode_checkpoint(const std::vector<char>& bytes) {
    ByteReader r(bytes);
    const std::string magic = r.bytes(4);
    if (magic != kCheckpointMagic) throw FormatError("bad checkpoint magic at offset 0");
    const auto version = r.u16();
    if (version != kCheckpointVersion)
        throw FormatError("unsupported checkpoint version " + std::to_string(version) + " at offset 4");
    const std::size_t len = r.u32();
    const ModelConfig cfg = ModelConfig::deserialize(r.bytes(len));
    Model m = Model::build(cfg, 0);
    for (const auto& p : m.parameters()) {
        auto t = p.tensor;
        read_tensor(r, t, p.name);
    }
    for (const auto& b : m.buffers()) {
        auto t = b.tensor;
        read_tensor(r, t, b.name);
    }
    if (r.remaining() != 0)
        throw FormatError("trailing bytes after checkpoint payload at offset " + std::to_string(r.offset()));
    return m;
}

void save_checkpoint(const Model& model, const std::string& path) { write_file_bytes(path, encode_checkpoint(model)); }

Model load_checkpoint(const std::string& path) { return decode_checkpoint(read_file_bytes(path)); }

} // namespace crownseg
