#include "myograph/models.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace myograph {

using ad::Shape;
using ad::Tape;
using ad::Tensor;

void TransformerConfig::validate() const {
    if (d_model == 0 || heads == 0 || d_model % heads != 0)
        throw std::invalid_argument("transformer: d_model " + std::to_string(d_model) + " not divisible by heads " +
                                    std::to_string(heads));
    if (conv_kernel % 2 == 0) throw std::invalid_argument("transformer: conv kernel must be odd");
    if (layers == 0 || ffn_hidden == 0 || input_dim == 0 || outputs == 0)
        throw std::invalid_argument("transformer: extents must be positive");
}

void CnnConfig::validate() const {
    if (channels.size() != spatial_kernels.size() + 1 || channels.front() != 1)
        throw std::invalid_argument("cnn: channel plan must start at 1 and have one more entry than kernels");
    if (temporal_kernel % 2 == 0) throw std::invalid_argument("cnn: temporal kernel must be odd");
    if (batch_norm_layers > spatial_kernels.size()) throw std::invalid_argument("cnn: too many batch-norm layers");
    std::size_t extent = input_dim;
    for (auto k : spatial_kernels) {
        if (k == 0 || k > extent) throw std::invalid_argument("cnn: spatial kernels exceed the keypoint axis");
        extent = extent - k + 1;
    }
    if (extent != 1) throw std::invalid_argument("cnn: spatial kernels must collapse the keypoint axis to 1");
}

std::size_t ModelWeights::parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, arr] : params) n += arr.values.size();
    return n;
}

const Tensor& BoundParams::at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw std::out_of_range("no parameter named " + name);
    return it->second;
}

std::size_t transformer_parameter_count(const TransformerConfig& c) {
    const std::size_t d = c.d_model;
    const std::size_t per_layer = 4 * (d * d + d) + 4 * d + (c.ffn_hidden * d + c.ffn_hidden) + (d * c.ffn_hidden + d);
    return (d * c.input_dim * c.conv_kernel + d) + c.layers * per_layer + 2 * d + (c.outputs * d + c.outputs);
}

std::size_t cnn_parameter_count(const CnnConfig& c) {
    std::size_t n = 0;
    for (std::size_t l = 0; l < c.spatial_kernels.size(); ++l) {
        n += c.channels[l + 1] * c.channels[l] * c.spatial_kernels[l] * c.temporal_kernel + c.channels[l + 1];
        if (l < c.batch_norm_layers) n += 2 * c.channels[l + 1];
    }
    return n;
}

std::vector<double> positional_table(std::size_t steps, std::size_t d_model) {
    std::vector<double> table(steps * d_model);
    for (std::size_t t = 0; t < steps; ++t)
        for (std::size_t i = 0; i < d_model; ++i) {
            const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(d_model));
            const double angle = static_cast<double>(t) * freq;
            table[t * d_model + i] = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
        }
    return table;
}

namespace {

class Initializer {
public:
    explicit Initializer(std::uint64_t seed) : rng_(seed) {}

    NamedArray uniform(Shape shape, std::size_t fan_in) {
        const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
        std::uniform_real_distribution<double> dist(-bound, bound);
        NamedArray a{shape, std::vector<double>(ad::numel(shape))};
        for (auto& v : a.values) v = dist(rng_);
        return a;
    }

private:
    std::mt19937_64 rng_;
};

NamedArray filled(Shape shape, double value) { return NamedArray{shape, std::vector<double>(ad::numel(shape), value)}; }

void add_scalers(ModelWeights& w, std::size_t inputs, std::size_t outputs) {
    w.buffers["input.scale"] = filled({inputs}, 1.0);
    w.buffers["input.shift"] = filled({inputs}, 0.0);
    w.buffers["output.scale"] = filled({outputs}, 1.0);
    w.buffers["output.shift"] = filled({outputs}, 0.0);
}

std::string layer_key(std::size_t l, const char* rest) { return "layers." + std::to_string(l) + "." + rest; }

Tensor input_tensor(Tape& tape, const WindowBatch& batch, std::size_t input_dim) {
    if (batch.batch == 0 || batch.steps == 0 || batch.inputs.size() != batch.batch * batch.steps * input_dim)
        throw std::invalid_argument("window batch of " + std::to_string(batch.batch) + "x" +
                                    std::to_string(batch.steps) + " frames carries " +
                                    std::to_string(batch.inputs.size()) + " input values");
    return tape.constant({batch.batch, batch.steps, input_dim}, batch.inputs);
}

const std::vector<double>& buffer(const ModelWeights& w, const std::string& name) {
    auto it = w.buffers.find(name);
    if (it == w.buffers.end()) throw std::out_of_range("no buffer named " + name);
    return it->second.values;
}

}  // namespace

Model Model::transformer(const TransformerConfig& c, std::uint64_t seed) {
    c.validate();
    Initializer init(seed);
    ModelWeights w;
    const std::size_t d = c.d_model;
    const std::size_t conv_fan = c.input_dim * c.conv_kernel;
    w.params["encoder.conv.weight"] = init.uniform({d, c.input_dim, c.conv_kernel}, conv_fan);
    w.params["encoder.conv.bias"] = init.uniform({d}, conv_fan);
    for (std::size_t l = 0; l < c.layers; ++l) {
        w.params[layer_key(l, "norm1.gain")] = filled({d}, 1.0);
        w.params[layer_key(l, "norm1.bias")] = filled({d}, 0.0);
        for (const char* proj : {"attn.q", "attn.k", "attn.v", "attn.out"}) {
            w.params[layer_key(l, proj) + ".weight"] = init.uniform({d, d}, d);
            w.params[layer_key(l, proj) + ".bias"] = init.uniform({d}, d);
        }
        w.params[layer_key(l, "norm2.gain")] = filled({d}, 1.0);
        w.params[layer_key(l, "norm2.bias")] = filled({d}, 0.0);
        w.params[layer_key(l, "ffn.fc1.weight")] = init.uniform({c.ffn_hidden, d}, d);
        w.params[layer_key(l, "ffn.fc1.bias")] = init.uniform({c.ffn_hidden}, d);
        w.params[layer_key(l, "ffn.fc2.weight")] = init.uniform({d, c.ffn_hidden}, c.ffn_hidden);
        w.params[layer_key(l, "ffn.fc2.bias")] = init.uniform({d}, c.ffn_hidden);
    }
    w.params["final_norm.gain"] = filled({d}, 1.0);
    w.params["final_norm.bias"] = filled({d}, 0.0);
    w.params["head.weight"] = init.uniform({c.outputs, d}, d);
    w.params["head.bias"] = init.uniform({c.outputs}, d);
    add_scalers(w, c.input_dim, c.outputs);
    return Model(c, std::move(w));
}

Model Model::cnn(const CnnConfig& c, std::uint64_t seed) {
    c.validate();
    Initializer init(seed);
    ModelWeights w;
    for (std::size_t l = 0; l < c.spatial_kernels.size(); ++l) {
        const std::size_t cin = c.channels[l], cout = c.channels[l + 1], kh = c.spatial_kernels[l];
        const std::size_t fan = cin * kh * c.temporal_kernel;
        const std::string p = "conv" + std::to_string(l);
        w.params[p + ".weight"] = init.uniform({cout, cin, kh, c.temporal_kernel}, fan);
        w.params[p + ".bias"] = init.uniform({cout}, fan);
        if (l < c.batch_norm_layers) {
            const std::string b = "bn" + std::to_string(l);
            w.params[b + ".gamma"] = filled({cout}, 1.0);
            w.params[b + ".beta"] = filled({cout}, 0.0);
            w.buffers[b + ".running_mean"] = filled({cout}, 0.0);
            w.buffers[b + ".running_var"] = filled({cout}, 1.0);
        }
    }
    add_scalers(w, c.input_dim, c.channels.back());
    return Model(c, std::move(w));
}

Model Model::from_config(const ModelConfig& config, std::uint64_t seed) {
    return std::visit(
        [seed](const auto& c) -> Model {
            if constexpr (std::is_same_v<std::decay_t<decltype(c)>, TransformerConfig>)
                return Model::transformer(c, seed);
            else
                return Model::cnn(c, seed);
        },
        config);
}

BoundParams Model::bind(Tape& tape) const {
    BoundParams bound;
    for (const auto& [name, arr] : weights_.params) bound.tensors.emplace(name, tape.parameter(arr.shape, arr.values));
    return bound;
}

Tensor Model::forward(Tape& tape, const BoundParams& params, const WindowBatch& batch, ForwardMode mode,
                      ForwardTrace* trace) {
    return forward_impl(tape, params, batch, mode, trace, &weights_.buffers);
}

Tensor Model::forward_impl(Tape& tape, const BoundParams& params, const WindowBatch& batch, ForwardMode mode,
                           ForwardTrace* trace, std::map<std::string, NamedArray>* running) const {
    if (is_transformer()) return forward_transformer(tape, params, batch, trace);
    return forward_cnn(tape, params, batch, mode, running);
}

Tensor Model::forward_transformer(Tape& tape, const BoundParams& p, const WindowBatch& batch,
                                  ForwardTrace* trace) const {
    const auto& c = std::get<TransformerConfig>(config_);
    const std::size_t bsz = batch.batch, steps = batch.steps, d = c.d_model;

    Tensor x = input_tensor(tape, batch, c.input_dim);
    x = ad::scale_shift(tape, x, buffer(weights_, "input.scale"), buffer(weights_, "input.shift"));
    // local motion encoder: one temporal convolution spanning all 50 coordinates
    x = ad::transpose(tape, x);  // [B, 50, T]
    x = ad::conv1d_temporal(tape, x, p.at("encoder.conv.weight"), p.at("encoder.conv.bias"));
    x = ad::transpose(tape, x);  // [B, T, d]
    x = ad::reshape(tape, x, {bsz * steps, d});
    if (trace) trace->embeddings.assign(x.data().begin(), x.data().end());

    if (c.positional_encoding) {
        const auto table = positional_table(steps, d);
        std::vector<double> tiled;
        tiled.reserve(bsz * steps * d);
        for (std::size_t b = 0; b < bsz; ++b) tiled.insert(tiled.end(), table.begin(), table.end());
        x = ad::add(tape, x, tape.constant({bsz * steps, d}, std::move(tiled)));
    }

    for (std::size_t l = 0; l < c.layers; ++l) {
        auto w = [&](const char* rest) -> const Tensor& { return p.at(layer_key(l, rest)); };
        Tensor h = ad::layer_norm(tape, x, w("norm1.gain"), w("norm1.bias"));
        Tensor q = ad::linear(tape, h, w("attn.q.weight"), w("attn.q.bias"));
        Tensor k = ad::linear(tape, h, w("attn.k.weight"), w("attn.k.bias"));
        Tensor v = ad::linear(tape, h, w("attn.v.weight"), w("attn.v.bias"));
        std::vector<double>* probs = nullptr;
        if (trace) probs = &trace->attention.emplace_back();
        Tensor a = ad::multi_head_attention(tape, q, k, v, c.heads, steps, probs);
        x = ad::add(tape, x, ad::linear(tape, a, w("attn.out.weight"), w("attn.out.bias")));
        h = ad::layer_norm(tape, x, w("norm2.gain"), w("norm2.bias"));
        h = ad::relu(tape, ad::linear(tape, h, w("ffn.fc1.weight"), w("ffn.fc1.bias")));
        x = ad::add(tape, x, ad::linear(tape, h, w("ffn.fc2.weight"), w("ffn.fc2.bias")));
    }
    x = ad::layer_norm(tape, x, p.at("final_norm.gain"), p.at("final_norm.bias"));
    Tensor y = ad::linear(tape, x, p.at("head.weight"), p.at("head.bias"));
    return ad::scale_shift(tape, y, buffer(weights_, "output.scale"), buffer(weights_, "output.shift"));
}

Tensor Model::forward_cnn(Tape& tape, const BoundParams& p, const WindowBatch& batch, ForwardMode mode,
                          std::map<std::string, NamedArray>* running) const {
    const auto& c = std::get<CnnConfig>(config_);
    const std::size_t bsz = batch.batch, steps = batch.steps;

    Tensor x = input_tensor(tape, batch, c.input_dim);
    x = ad::scale_shift(tape, x, buffer(weights_, "input.scale"), buffer(weights_, "input.shift"));
    x = ad::transpose(tape, x);  // [B, 50, T]
    x = ad::reshape(tape, x, {bsz, 1, c.input_dim, steps});
    const std::size_t nlayers = c.spatial_kernels.size();
    for (std::size_t l = 0; l < nlayers; ++l) {
        const std::string conv = "conv" + std::to_string(l);
        x = ad::conv2d(tape, x, p.at(conv + ".weight"), p.at(conv + ".bias"));
        if (l < c.batch_norm_layers) {
            const std::string bn = "bn" + std::to_string(l);
            ad::BatchNormState st;
            st.training = mode == ForwardMode::train;
            st.momentum = c.bn_momentum;
            st.running_mean = &buffer(weights_, bn + ".running_mean");
            st.running_var = &buffer(weights_, bn + ".running_var");
            if (st.training && running) {
                st.update_mean = &running->at(bn + ".running_mean").values;
                st.update_var = &running->at(bn + ".running_var").values;
            }
            x = ad::batch_norm(tape, x, p.at(bn + ".gamma"), p.at(bn + ".beta"), st);
        }
        if (l + 1 < nlayers) x = ad::relu(tape, x);
    }
    const std::size_t outs = c.channels.back();
    x = ad::reshape(tape, x, {bsz, outs, steps});
    x = ad::transpose(tape, x);  // [B, T, 8]
    x = ad::reshape(tape, x, {bsz * steps, outs});
    return ad::scale_shift(tape, x, buffer(weights_, "output.scale"), buffer(weights_, "output.shift"));
}

void Model::fit_scalers(const WindowBatch& data) {
    const std::size_t frames = data.batch * data.steps;
    if (frames == 0) throw std::invalid_argument("fit_scalers: empty data");
    auto fit = [frames](const std::vector<double>& values, std::size_t dim, double floor, std::vector<double>& scale,
                        std::vector<double>& shift, bool invert) {
        for (std::size_t j = 0; j < dim; ++j) {
            double mean = 0.0;
            for (std::size_t f = 0; f < frames; ++f) mean += values[f * dim + j];
            mean /= static_cast<double>(frames);
            double var = 0.0;
            for (std::size_t f = 0; f < frames; ++f) var += (values[f * dim + j] - mean) * (values[f * dim + j] - mean);
            const double sd = std::max(floor, std::sqrt(var / static_cast<double>(frames)));
            scale[j] = invert ? 1.0 / sd : sd;
            shift[j] = invert ? -mean / sd : mean;
        }
    };
    const std::size_t in = weights_.buffers.at("input.scale").values.size();
    const std::size_t out = weights_.buffers.at("output.scale").values.size();
    if (data.inputs.size() != frames * in) throw std::invalid_argument("fit_scalers: input size mismatch");
    fit(data.inputs, in, 1e-6, weights_.buffers["input.scale"].values, weights_.buffers["input.shift"].values, true);
    if (!data.targets.empty()) {
        if (data.targets.size() != frames * out) throw std::invalid_argument("fit_scalers: target size mismatch");
        fit(data.targets, out, 1.0, weights_.buffers["output.scale"].values, weights_.buffers["output.shift"].values,
            false);
    }
}

std::vector<double> Model::predict(const WindowBatch& batch) const {
    constexpr std::size_t kChunk = 64;
    const std::size_t in = batch.inputs.size() / std::max<std::size_t>(1, batch.batch);
    std::vector<double> out;
    for (std::size_t start = 0; start < batch.batch; start += kChunk) {
        const std::size_t n = std::min(kChunk, batch.batch - start);
        WindowBatch chunk;
        chunk.batch = n;
        chunk.steps = batch.steps;
        chunk.inputs.assign(batch.inputs.begin() + static_cast<std::ptrdiff_t>(start * in),
                            batch.inputs.begin() + static_cast<std::ptrdiff_t>((start + n) * in));
        Tape tape(false);
        auto bound = bind(tape);
        Tensor y = forward_impl(tape, bound, chunk, ForwardMode::eval, nullptr, nullptr);
        out.insert(out.end(), y.data().begin(), y.data().end());
    }
    return out;
}

}  // namespace myograph
