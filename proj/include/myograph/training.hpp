#pragma once

// Adam, the mini-batch training loop with validation-best selection and
// early stopping, fine-tuning, presets and the MIAC checkpoint format.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "myograph/datamodel.hpp"
#include "myograph/models.hpp"

namespace myograph::train {

enum class ModelKind { transformer, cnn };
std::string_view model_kind_name(ModelKind kind);
ModelKind model_kind_from_name(std::string_view name);

struct AdamConfig {
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    bool operator==(const AdamConfig&) const = default;
};

struct AdamState {
    std::size_t step = 0;
    std::map<std::string, std::vector<double>> m;  // first moments, zero-initialized on first use
    std::map<std::string, std::vector<double>> v;
    bool operator==(const AdamState&) const = default;
};

class Adam {
public:
    explicit Adam(AdamConfig config = {}, AdamState state = {}) : config_(config), state_(std::move(state)) {}
    void step(ModelWeights& weights, const GradientMap& grads);
    const AdamConfig& config() const { return config_; }
    const AdamState& state() const { return state_; }

private:
    AdamConfig config_;
    AdamState state_;
};

struct TrainConfig {
    std::string preset = "desk";
    AdamConfig adam{};
    std::size_t batch_size = 16;
    std::size_t max_steps = 1000;
    std::size_t eval_every = 50;
    std::size_t patience = 20;  // evaluations without improvement
    std::size_t window = kDefaultWindow;
    std::uint64_t seed = 0;
    std::size_t max_val_windows = 0;  // 0 keeps every validation window

    bool operator==(const TrainConfig&) const = default;
};

// "desk" (fast CPU defaults) or "paper" (reference hyperparameters).
TrainConfig preset_train_config(std::string_view preset, ModelKind kind);
ModelConfig preset_model_config(std::string_view preset, ModelKind kind);
Model create_model(std::string_view preset, ModelKind kind, std::uint64_t seed);

WindowBatch make_batch(std::span<const Window> windows);
WindowBatch make_batch(std::span<const Window> windows, std::span<const std::size_t> indices);

// Gradients of the batch MSE with respect to every parameter.
double loss_and_gradients(Model& model, const WindowBatch& batch, GradientMap& grads);
// One optimizer step on one batch; returns the pre-step loss.
double train_step(Model& model, Adam& adam, const WindowBatch& batch);

struct EvalPoint {
    std::size_t step = 0;
    double train_loss = 0;  // mean batch loss since the previous evaluation
    double val_rmse = 0;
};

struct TrainResult {
    Model model;  // validation-best weights
    std::size_t steps_run = 0;
    std::size_t best_step = 0;
    double best_val_rmse = 0;
    bool stopped_early = false;
    std::vector<EvalPoint> history{};
    std::string rng_state{};
    AdamState optimizer{};  // state after the last step run
};

// Trains from the given initialization. Scalers are fitted on the training
// windows unless fit_scalers is false (fine-tuning keeps the source scalers).
// With no validation windows the final weights are returned. A given
// optimizer state continues its moments and step count.
TrainResult train_model(Model model, const TrainConfig& config, std::span<const Window> train,
                        std::span<const Window> val, bool fit_scalers = true,
                        const AdamState* resume = nullptr);

TrainResult fine_tune(const Model& pretrained, const TrainConfig& config, std::span<const Window> train,
                      std::span<const Window> val);

std::string model_config_json(const ModelConfig& config);
ModelConfig parse_model_config_json(std::string_view text);
std::string train_config_json(const TrainConfig& config);
TrainConfig parse_train_config_json(std::string_view text);

struct Checkpoint {
    Model model;
    TrainConfig config{};
    std::string rng_state{};
    std::optional<AdamState> optimizer{};
};

// Optimizer for resuming; throws when the checkpoint carries no Adam state.
Adam resume_optimizer(const Checkpoint& checkpoint);

// "MIAC", u32 version, u64 header length, JSON header, little-endian f32
// payloads in header order. Weights are stored at single precision.
std::string checkpoint_bytes(const Checkpoint& checkpoint);
Checkpoint checkpoint_from_bytes(std::string_view bytes);
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Rounds every parameter and buffer to single precision in place.
void quantize_f32(ModelWeights& weights);

}  // namespace myograph::train
