#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "crownseg/ops.hpp"

namespace crownseg {

enum class TaskMode { single_task, multi_task };

std::string to_string(TaskMode mode);
TaskMode parse_task_mode(const std::string& text);

struct ModelConfig {
    std::size_t bands = 8;
    std::size_t classes = 5;
    std::size_t base_filters = 32;
    std::vector<std::size_t> atrous_rates{3, 6, 9};
    double dropout_rate = 0.65;
    TaskMode mode = TaskMode::multi_task;
    double lambda = 1.0; // weight of the distance loss
    double gamma = 2.0;  // focal loss focusing parameter
    double bn_epsilon = 1e-5;
    double bn_momentum = 0.9;

    void validate() const;

    /// UTF-8 key=value block, one entry per line.
    std::string serialize() const;
    static ModelConfig deserialize(const std::string& text);

    bool operator==(const ModelConfig&) const = default;
};

/// Network outputs at input resolution: class probabilities N x C x H x W and,
/// in multi-task mode, the distance estimate N x 1 x H x W.
struct PredictionPack {
    Tensor<float> probs;
    std::optional<Tensor<float>> distance;
};

/// Anything that maps an N x B x H x W tile batch to a PredictionPack.
/// Implementations must be safe to call concurrently.
class TilePredictor {
public:
    virtual ~TilePredictor() = default;
    virtual PredictionPack predict(const Tensor<float>& x) const = 0;
    virtual std::size_t bands() const = 0;
    virtual std::size_t classes() const = 0;
    virtual bool has_distance() const = 0;
};

enum class ParamGroup { encoder, seg_decoder, dist_decoder };

struct NamedTensor {
    std::string name;
    ParamGroup group;
    Tensor<float> tensor;
};

struct EncoderFeatures {
    Tensor<float> stem;   // stride 1, F0 channels
    Tensor<float> block1; // stride 2, F0 channels
    Tensor<float> output; // stride 4, 4*F0 channels
};

// Shared ResNet-9 encoder with an ASPP segmentation decoder and, in
// multi-task mode, a distance-regression decoder.
//
// Encoder: stem 3x3 conv, then three pre-activation residual blocks
// (BN-ELU-conv-BN-ELU-conv) of widths F0, 2F0, 4F0. Blocks 1 and 2 use
// stride 2 with 1x1 projection shortcuts; block 3 keeps the resolution and
// widens through a parameter-free zero-channel shortcut. Nine convolutions.
class Model : public TilePredictor {
public:
    static Model build(const ModelConfig& cfg, std::uint64_t seed);

    const ModelConfig& config() const noexcept { return cfg_; }

    /// Full forward pass. Train mode uses batch statistics (updating the
    /// running state) and dropout; eval mode leaves the model untouched.
    PredictionPack forward(const Tensor<float>& x, Mode mode, Rng& rng, Tape<float>* tape = nullptr);

    /// Eval-mode forward without recording.
    PredictionPack predict(const Tensor<float>& x) const override;

    EncoderFeatures encode(const Tensor<float>& x) const;

    std::size_t bands() const override { return cfg_.bands; }
    std::size_t classes() const override { return cfg_.classes; }
    bool has_distance() const override { return cfg_.mode == TaskMode::multi_task; }

    /// Learnable tensors in declaration order.
    const std::vector<NamedTensor>& parameters() const noexcept { return params_; }
    /// Batch-norm running statistics in declaration order.
    const std::vector<NamedTensor>& buffers() const noexcept { return buffers_; }

    std::size_t parameter_count() const;
    std::size_t encoder_conv_count() const noexcept { return encoder_convs_; }

    void zero_grad();

    /// Deep copy (parameters and running state are not shared).
    Model clone() const;

    /// Copies parameter and buffer values from a model with the same config.
    void load_state_from(const Model& other);

    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;
    Model(Model&&) = default;
    Model& operator=(Model&&) = default;

    struct Conv {
        Tensor<float> weight;
        Tensor<float> bias;
        Conv2dOptions opts;
    };
    struct Norm {
        Tensor<float> gamma;
        Tensor<float> beta;
        BatchNormState<float> state;
    };
    struct ResBlock {
        Norm bn1;
        Conv conv1;
        Norm bn2;
        Conv conv2;
        std::optional<Conv> projection;
        std::size_t pad_channels = 0;
    };
    struct ConvBlock {
        Conv conv;
        Norm bn;
    };

private:
    Model() = default;

    template <typename Self>
    friend PredictionPack run_network(Self& self, const Tensor<float>& x, Mode mode, Rng* rng, Tape<float>* tape);
    template <typename Self>
    friend EncoderFeatures run_encoder(Self& self, const Tensor<float>& x, Mode mode, Tape<float>* tape);

    void register_conv(const std::string& name, ParamGroup group, Conv& conv);
    void register_norm(const std::string& name, ParamGroup group, Norm& norm);
    void rebuild_registry();

    ModelConfig cfg_;
    std::size_t encoder_convs_ = 0;

    Conv stem_;
    std::vector<ResBlock> blocks_;

    Conv aspp_pool_;
    Conv aspp_pointwise_;
    std::vector<Conv> aspp_atrous_;
    Norm aspp_norm_;
    ConvBlock seg_cb1_;
    ConvBlock seg_cb2_;
    Conv classifier_;

    ConvBlock dist_cb1_;
    ConvBlock dist_cb2_;
    Conv dist_head_;

    std::vector<NamedTensor> params_;
    std::vector<NamedTensor> buffers_;
};

inline constexpr std::uint16_t kCheckpointVersion = 1;

/// CKP1 encoding: magic, u16 version, u32-length-prefixed config block, then
/// every parameter and buffer as (u8 rank, u32 extents..., f32 values...).
std::vector<char> encode_checkpoint(const Model& model);
Model decode_checkpoint(const std::vector<char>& bytes);

void save_checkpoint(const Model& model, const std::string& path);
Model load_checkpoint(const std::string& path);

} // namespace crownseg
