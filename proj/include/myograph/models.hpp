#pragma once

// The two learned architectures: a temporal-convolution motion encoder
// followed by a transformer, and the spatio-temporal CNN baseline.
//
// Both map a batch of windows [B, T, 50] (flattened 25x2 keypoints per frame)
// to predictions [B*T, 8] on the normalized 0-100 EMG scale. Outputs are not
// clamped.

#include <cstdint>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "myograph/ops.hpp"
#include "myograph/tensor.hpp"

namespace myograph {

inline constexpr std::size_t kInputDim = 50;
inline constexpr std::size_t kMuscleCount = 8;

struct TransformerConfig {
    std::size_t d_model = 128;  // also the motion-encoder channel count
    std::size_t layers = 4;
    std::size_t heads = 8;
    std::size_t ffn_hidden = 256;
    std::size_t conv_kernel = 9;
    std::size_t input_dim = kInputDim;
    std::size_t outputs = kMuscleCount;
    bool positional_encoding = true;

    void validate() const;
    bool operator==(const TransformerConfig&) const = default;
};

struct CnnConfig {
    std::vector<std::size_t> channels{1, 16, 32, 32, 16, 8};
    std::vector<std::size_t> spatial_kernels{11, 11, 11, 11, 10};
    std::size_t temporal_kernel = 3;
    std::size_t batch_norm_layers = 3;
    std::size_t input_dim = kInputDim;
    double bn_momentum = 0.1;

    void validate() const;
    bool operator==(const CnnConfig&) const = default;
};

using ModelConfig = std::variant<TransformerConfig, CnnConfig>;

struct NamedArray {
    ad::Shape shape;
    std::vector<double> values;
    bool operator==(const NamedArray&) const = default;
};

// Trainable parameters plus non-trainable buffers (batch-norm running
// statistics, input/output scalers). Maps keep names sorted.
struct ModelWeights {
    std::map<std::string, NamedArray> params;
    std::map<std::string, NamedArray> buffers;

    std::size_t parameter_count() const;
    bool operator==(const ModelWeights&) const = default;
};

using GradientMap = std::map<std::string, std::vector<double>>;

// One tape-bound copy of a model's parameters.
struct BoundParams {
    std::map<std::string, ad::Tensor> tensors;
    const ad::Tensor& at(const std::string& name) const;
};

struct WindowBatch {
    std::size_t batch = 0;
    std::size_t steps = 0;
    std::vector<double> inputs;   // [B, T, 50]
    std::vector<double> targets;  // [B, T, 8], optional for inference
};

enum class ForwardMode { train, eval };

// Extra outputs for inspection.
struct ForwardTrace {
    std::vector<std::vector<double>> attention;  // per layer, [B, heads, T, T]
    std::vector<double> embeddings;              // encoder output [B*T, d_model]
};

class Model {
public:
    static Model transformer(const TransformerConfig& config, std::uint64_t seed);
    static Model cnn(const CnnConfig& config, std::uint64_t seed);
    static Model from_config(const ModelConfig& config, std::uint64_t seed);

    bool is_transformer() const { return std::holds_alternative<TransformerConfig>(config_); }
    std::string kind_name() const { return is_transformer() ? "transformer" : "cnn"; }
    const ModelConfig& config() const { return config_; }
    ModelWeights& weights() { return weights_; }
    const ModelWeights& weights() const { return weights_; }

    BoundParams bind(ad::Tape& tape) const;

    // Prediction [B*T, 8]. In train mode the CNN uses batch statistics and
    // folds them into its running buffers.
    ad::Tensor forward(ad::Tape& tape, const BoundParams& params, const WindowBatch& batch, ForwardMode mode,
                       ForwardTrace* trace = nullptr);

    // Standardize inputs per coordinate and outputs per muscle from the
    // given training data, stored as buffers.
    void fit_scalers(const WindowBatch& data);

    // Forward in eval mode without recording.
    std::vector<double> predict(const WindowBatch& batch) const;

    bool operator==(const Model&) const = default;

private:
    Model(ModelConfig config, ModelWeights weights) : config_(std::move(config)), weights_(std::move(weights)) {}

    // running receives batch-norm statistic updates (train mode only).
    ad::Tensor forward_impl(ad::Tape& tape, const BoundParams& params, const WindowBatch& batch, ForwardMode mode,
                            ForwardTrace* trace, std::map<std::string, NamedArray>* running) const;
    ad::Tensor forward_transformer(ad::Tape& tape, const BoundParams& params, const WindowBatch& batch,
                                   ForwardTrace* trace) const;
    ad::Tensor forward_cnn(ad::Tape& tape, const BoundParams& params, const WindowBatch& batch, ForwardMode mode,
                           std::map<std::string, NamedArray>* running) const;

    ModelConfig config_;
    ModelWeights weights_;
};

// Closed-form parameter counts, independent of allocation.
std::size_t transformer_parameter_count(const TransformerConfig& config);
std::size_t cnn_parameter_count(const CnnConfig& config);

// Sinusoidal table [steps, d_model].
std::vector<double> positional_table(std::size_t steps, std::size_t d_model);

}  // namespace myograph
