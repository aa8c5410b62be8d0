#include "myograph/training.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "myograph/baselines.hpp"
#include "myograph/evaluation.hpp"

namespace myograph::train {

using nlohmann::json;

std::string_view model_kind_name(ModelKind kind) { return kind == ModelKind::transformer ? "transformer" : "cnn"; }

ModelKind model_kind_from_name(std::string_view name) {
    if (name == "transformer") return ModelKind::transformer;
    if (name == "cnn") return ModelKind::cnn;
    throw std::invalid_argument("unknown model kind: " + std::string(name));
}

void Adam::step(ModelWeights& weights, const GradientMap& grads) {
    ++state_.step;
    const double t = static_cast<double>(state_.step);
    const double c1 = 1.0 - std::pow(config_.beta1, t);
    const double c2 = 1.0 - std::pow(config_.beta2, t);
    for (auto& [name, param] : weights.params) {
        auto g_it = grads.find(name);
        if (g_it == grads.end()) continue;
        const auto& g = g_it->second;
        if (g.size() != param.values.size()) throw std::invalid_argument("Adam: gradient size mismatch for " + name);
        auto& m = state_.m[name];
        auto& v = state_.v[name];
        if (m.empty()) m.assign(g.size(), 0.0);
        if (v.empty()) v.assign(g.size(), 0.0);
        for (std::size_t i = 0; i < g.size(); ++i) {
            m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g[i];
            v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g[i] * g[i];
            const double mh = m[i] / c1;
            const double vh = v[i] / c2;
            param.values[i] -= config_.learning_rate * mh / (std::sqrt(vh) + config_.eps);
        }
    }
}

TrainConfig preset_train_config(std::string_view preset, ModelKind kind) {
    TrainConfig c;
    c.preset = std::string(preset);
    if (preset == "desk") {
        c.adam.learning_rate = 1e-4;
        c.batch_size = kind == ModelKind::transformer ? 16 : 8;
        c.max_steps = kind == ModelKind::transformer ? 1200 : 1200;
        c.eval_every = 50;
        c.patience = 20;
        c.max_val_windows = 200;
    } else if (preset == "paper") {
        c.adam.learning_rate = 5e-6;
        c.batch_size = kind == ModelKind::transformer ? 32 : 8;
        c.max_steps = 200000;
        c.eval_every = 500;
        c.patience = 20;
    } else {
        throw std::invalid_argument("unknown preset: " + std::string(preset));
    }
    return c;
}

ModelConfig preset_model_config(std::string_view preset, ModelKind kind) {
    if (preset != "desk" && preset != "paper") throw std::invalid_argument("unknown preset: " + std::string(preset));
    if (kind == ModelKind::transformer) return TransformerConfig{};
    return CnnConfig{};
}

Model create_model(std::string_view preset, ModelKind kind, std::uint64_t seed) {
    return Model::from_config(preset_model_config(preset, kind), seed);
}

WindowBatch make_batch(std::span<const Window> windows, std::span<const std::size_t> indices) {
    WindowBatch b;
    b.batch = indices.size();
    if (indices.empty()) return b;
    b.steps = windows[indices[0]].length;
    b.inputs.reserve(b.batch * b.steps * kFrameDim);
    b.targets.reserve(b.batch * b.steps * kMuscles);
    for (std::size_t i : indices) {
        const Window& w = windows[i];
        if (w.length != b.steps) throw std::invalid_argument("make_batch: mixed window lengths");
        b.inputs.insert(b.inputs.end(), w.keypoints.begin(), w.keypoints.end());
        b.targets.insert(b.targets.end(), w.emg.begin(), w.emg.end());
    }
    return b;
}

WindowBatch make_batch(std::span<const Window> windows) {
    std::vector<std::size_t> idx(windows.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    return make_batch(windows, idx);
}

double loss_and_gradients(Model& model, const WindowBatch& batch, GradientMap& grads) {
    ad::Tape tape;
    BoundParams bound = model.bind(tape);
    ad::Tensor pred = model.forward(tape, bound, batch, ForwardMode::train);
    ad::Tensor target = tape.constant(pred.shape(), batch.targets);
    ad::Tensor loss = ad::mse(tape, pred, target);
    tape.backward(loss);
    grads.clear();
    for (const auto& [name, t] : bound.tensors) grads[name].assign(t.grad().begin(), t.grad().end());
    return loss.item();
}

double train_step(Model& model, Adam& adam, const WindowBatch& batch) {
    GradientMap grads;
    double loss = loss_and_gradients(model, batch, grads);
    adam.step(model.weights(), grads);
    return loss;
}

namespace {

void shuffle(std::vector<std::size_t>& v, std::mt19937_64& rng) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[baselines::random_choice(i, rng)]);
}

std::vector<std::size_t> evenly_spaced(std::size_t n, std::size_t keep) {
    std::vector<std::size_t> idx;
    if (keep == 0 || keep >= n) {
        for (std::size_t i = 0; i < n; ++i) idx.push_back(i);
        return idx;
    }
    for (std::size_t i = 0; i < keep; ++i) idx.push_back(i * n / keep);
    return idx;
}

std::string rng_string(const std::mt19937_64& rng) {
    std::ostringstream o;
    o << rng;
    return o.str();
}

}  // namespace

TrainResult train_model(Model model, const TrainConfig& config, std::span<const Window> train,
                        std::span<const Window> val, bool fit_scalers, const AdamState* resume) {
    if (train.empty()) throw std::invalid_argument("train_model: no training windows");
    if (config.batch_size == 0) throw std::invalid_argument("train_model: batch size must be at least 1");
    if (!(config.adam.learning_rate >= 0)) throw std::invalid_argument("train_model: learning rate must be >= 0");
    if (config.eval_every == 0) throw std::invalid_argument("train_model: eval_every must be positive");

    if (fit_scalers) model.fit_scalers(make_batch(train));

    const auto val_idx = evenly_spaced(val.size(), config.max_val_windows);
    const WindowBatch val_batch = make_batch(val, val_idx);
    auto validate = [&](const Model& m) { return eval::rmse(m.predict(val_batch), val_batch.targets); };

    TrainResult r{model};
    Adam adam(config.adam, resume ? *resume : AdamState{});
    std::mt19937_64 rng(config.seed);
    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    shuffle(order, rng);
    std::size_t cursor = 0;

    bool have_best = false;
    std::size_t since_best = 0;
    double loss_sum = 0;
    std::size_t loss_n = 0;
    if (!val.empty()) {
        r.best_val_rmse = validate(model);
        r.best_step = 0;
        have_best = true;
        r.history.push_back({0, 0.0, r.best_val_rmse});
    }

    std::vector<std::size_t> idx;
    for (std::size_t step = 1; step <= config.max_steps; ++step) {
        idx.clear();
        for (std::size_t b = 0; b < config.batch_size; ++b) {
            if (cursor == order.size()) {
                shuffle(order, rng);
                cursor = 0;
            }
            idx.push_back(order[cursor++]);
        }
        double loss = train_step(model, adam, make_batch(train, idx));
        if (!std::isfinite(loss)) throw std::runtime_error("non-finite loss at step " + std::to_string(step));
        loss_sum += loss;
        ++loss_n;
        r.steps_run = step;

        if (step % config.eval_every == 0 || step == config.max_steps) {
            EvalPoint p{step, loss_sum / static_cast<double>(loss_n), 0.0};
            loss_sum = 0;
            loss_n = 0;
            if (!val.empty()) {
                p.val_rmse = validate(model);
                if (p.val_rmse < r.best_val_rmse) {
                    r.best_val_rmse = p.val_rmse;
                    r.best_step = step;
                    r.model = model;
                    since_best = 0;
                } else {
                    ++since_best;
                }
            }
            r.history.push_back(p);
            if (!val.empty() && since_best >= config.patience) {
                r.stopped_early = true;
                break;
            }
        }
    }
    if (!have_best) {
        r.model = model;
        r.best_step = r.steps_run;
    }
    r.rng_state = rng_string(rng);
    r.optimizer = adam.state();
    return r;
}

TrainResult fine_tune(const Model& pretrained, const TrainConfig& config, std::span<const Window> train,
                      std::span<const Window> val) {
    if (train.empty()) {
        TrainResult r{pretrained};
        return r;
    }
    return train_model(pretrained, config, train, val, false);
}

namespace {

json model_config_to_json(const ModelConfig& config) {
    json j;
    if (const auto* t = std::get_if<TransformerConfig>(&config)) {
        j = {{"kind", "transformer"},        {"d_model", t->d_model},       {"layers", t->layers},
             {"heads", t->heads},            {"ffn_hidden", t->ffn_hidden}, {"conv_kernel", t->conv_kernel},
             {"input_dim", t->input_dim},    {"outputs", t->outputs},       {"positional_encoding", t->positional_encoding}};
    } else {
        const auto& c = std::get<CnnConfig>(config);
        j = {{"kind", "cnn"},
             {"channels", c.channels},
             {"spatial_kernels", c.spatial_kernels},
             {"temporal_kernel", c.temporal_kernel},
             {"batch_norm_layers", c.batch_norm_layers},
             {"input_dim", c.input_dim},
             {"bn_momentum", c.bn_momentum}};
    }
    return j;
}

ModelConfig model_config_from(const json& j) {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "transformer") {
        TransformerConfig t;
        t.d_model = j.at("d_model").get<std::size_t>();
        t.layers = j.at("layers").get<std::size_t>();
        t.heads = j.at("heads").get<std::size_t>();
        t.ffn_hidden = j.at("ffn_hidden").get<std::size_t>();
        t.conv_kernel = j.at("conv_kernel").get<std::size_t>();
        t.input_dim = j.at("input_dim").get<std::size_t>();
        t.outputs = j.at("outputs").get<std::size_t>();
        t.positional_encoding = j.at("positional_encoding").get<bool>();
        t.validate();
        return t;
    }
    if (kind == "cnn") {
        CnnConfig c;
        c.channels = j.at("channels").get<std::vector<std::size_t>>();
        c.spatial_kernels = j.at("spatial_kernels").get<std::vector<std::size_t>>();
        c.temporal_kernel = j.at("temporal_kernel").get<std::size_t>();
        c.batch_norm_layers = j.at("batch_norm_layers").get<std::size_t>();
        c.input_dim = j.at("input_dim").get<std::size_t>();
        c.bn_momentum = j.at("bn_momentum").get<double>();
        c.validate();
        return c;
    }
    throw std::invalid_argument("unknown model kind: " + kind);
}

json train_config_to_json(const TrainConfig& c) {
    return {{"preset", c.preset},
            {"learning_rate", c.adam.learning_rate},
            {"beta1", c.adam.beta1},
            {"beta2", c.adam.beta2},
            {"eps", c.adam.eps},
            {"batch_size", c.batch_size},
            {"max_steps", c.max_steps},
            {"eval_every", c.eval_every},
            {"patience", c.patience},
            {"window", c.window},
            {"seed", c.seed},
            {"max_val_windows", c.max_val_windows}};
}

TrainConfig train_config_from(const json& j) {
    TrainConfig c;
    c.preset = j.at("preset").get<std::string>();
    c.adam.learning_rate = j.at("learning_rate").get<double>();
    c.adam.beta1 = j.at("beta1").get<double>();
    c.adam.beta2 = j.at("beta2").get<double>();
    c.adam.eps = j.at("eps").get<double>();
    c.batch_size = j.at("batch_size").get<std::size_t>();
    c.max_steps = j.at("max_steps").get<std::size_t>();
    c.eval_every = j.at("eval_every").get<std::size_t>();
    c.patience = j.at("patience").get<std::size_t>();
    c.window = j.at("window").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.max_val_windows = j.value("max_val_windows", std::size_t{0});
    return c;
}

constexpr char kMagic[4] = {'M', 'I', 'A', 'C'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <class T>
void put_le(std::string& out, T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
}

template <class T>
T get_le(std::string_view in, std::size_t pos) {
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
    return static_cast<T>(v);
}

struct Entry {
    std::string name;
    std::string role;
    const ad::Shape* shape;
    const std::vector<double>* values;
};

}  // namespace

std::string model_config_json(const ModelConfig& config) { return model_config_to_json(config).dump(); }

ModelConfig parse_model_config_json(std::string_view text) { return model_config_from(json::parse(text)); }

std::string train_config_json(const TrainConfig& config) { return train_config_to_json(config).dump(); }

TrainConfig parse_train_config_json(std::string_view text) { return train_config_from(json::parse(text)); }

void quantize_f32(ModelWeights& weights) {
    for (auto* group : {&weights.params, &weights.buffers})
        for (auto& [name, arr] : *group)
            for (double& v : arr.values) v = static_cast<double>(static_cast<float>(v));
}

Adam resume_optimizer(const Checkpoint& checkpoint) {
    if (!checkpoint.optimizer) throw std::runtime_error("checkpoint has no optimizer state; it can be used for inference only");
    return Adam(checkpoint.config.adam, *checkpoint.optimizer);
}

std::string checkpoint_bytes(const Checkpoint& ck) {
    const ModelWeights& w = ck.model.weights();
    std::vector<Entry> entries;
    for (const auto& [name, arr] : w.params) entries.push_back({name, "param", &arr.shape, &arr.values});
    for (const auto& [name, arr] : w.buffers) entries.push_back({name, "buffer", &arr.shape, &arr.values});
    if (ck.optimizer) {
        for (const auto& [name, arr] : w.params) {
            auto m = ck.optimizer->m.find(name);
            auto v = ck.optimizer->v.find(name);
            if (m != ck.optimizer->m.end()) entries.push_back({"adam.m." + name, "adam_m", &arr.shape, &m->second});
            if (v != ck.optimizer->v.end()) entries.push_back({"adam.v." + name, "adam_v", &arr.shape, &v->second});
        }
    }
    std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) { return a.name < b.name; });

    json tensors = json::array();
    std::size_t offset = 0;
    for (const auto& e : entries) {
        if (e.values->size() != ad::numel(*e.shape)) throw std::logic_error("checkpoint: tensor size mismatch for " + e.name);
        tensors.push_back({{"name", e.name}, {"role", e.role}, {"dtype", "f32"}, {"shape", *e.shape}, {"offset", offset}});
        offset += e.values->size() * 4;
    }
    json header;
    header["config"] = {{"model", model_config_to_json(ck.model.config())}, {"train", train_config_to_json(ck.config)}};
    header["tensors"] = tensors;
    header["rng_state"] = ck.rng_state;
    header["adam"] = ck.optimizer ? json{{"step", ck.optimizer->step}} : json(nullptr);
    const std::string text = header.dump();

    std::string out(kMagic, 4);
    put_le<std::uint32_t>(out, kCheckpointVersion);
    put_le<std::uint64_t>(out, text.size());
    out += text;
    out.reserve(out.size() + offset);
    for (const auto& e : entries)
        for (double v : *e.values) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    return out;
}

Checkpoint checkpoint_from_bytes(std::string_view bytes) {
    if (bytes.size() < 16 || bytes.substr(0, 4) != std::string_view(kMagic, 4))
        throw std::runtime_error("checkpoint: bad magic");
    const auto version = get_le<std::uint32_t>(bytes, 4);
    if (version != kCheckpointVersion) throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
    const auto header_len = get_le<std::uint64_t>(bytes, 8);
    if (header_len > bytes.size() - 16) throw std::runtime_error("checkpoint: truncated header");
    json header;
    try {
        header = json::parse(bytes.substr(16, header_len));
    } catch (const json::parse_error& e) {
        throw std::runtime_error(std::string("checkpoint: malformed header: ") + e.what());
    }
    const std::string_view payload = bytes.substr(16 + header_len);

    ModelConfig mc = model_config_from(header.at("config").at("model"));
    Checkpoint ck{Model::from_config(mc, 0)};
    ck.config = train_config_from(header.at("config").at("train"));
    ck.rng_state = header.value("rng_state", "");
    ModelWeights& w = ck.model.weights();
    std::optional<AdamState> adam;
    if (header.contains("adam") && !header["adam"].is_null()) {
        adam.emplace();
        adam->step = header["adam"].at("step").get<std::size_t>();
    }

    std::size_t expected_offset = 0;
    std::size_t params_seen = 0, buffers_seen = 0;
    std::string previous;
    for (const auto& t : header.at("tensors")) {
        const std::string name = t.at("name").get<std::string>();
        const std::string role = t.at("role").get<std::string>();
        if (t.at("dtype").get<std::string>() != "f32") throw std::runtime_error("checkpoint: unsupported dtype for " + name);
        if (!previous.empty() && !(previous < name)) throw std::runtime_error("checkpoint: tensors not sorted by name");
        previous = name;
        const auto shape = t.at("shape").get<ad::Shape>();
        const auto offset = t.at("offset").get<std::size_t>();
        if (offset != expected_offset) throw std::runtime_error("checkpoint: inconsistent offset for " + name);
        const std::size_t n = ad::numel(shape);
        if (offset + n * 4 > payload.size()) throw std::runtime_error("checkpoint: truncated payload at " + name);
        std::vector<double> values(n);
        for (std::size_t i = 0; i < n; ++i)
            values[i] = static_cast<double>(std::bit_cast<float>(get_le<std::uint32_t>(payload, offset + 4 * i)));
        expected_offset = offset + n * 4;

        auto place = [&](std::map<std::string, NamedArray>& group, const std::string& key) {
            auto it = group.find(key);
            if (it == group.end()) throw std::runtime_error("checkpoint: unknown tensor " + name);
            if (it->second.shape != shape)
                throw std::runtime_error("checkpoint: shape " + ad::shape_str(shape) + " for " + name + " but model expects " +
                                         ad::shape_str(it->second.shape));
            it->second.values = std::move(values);
        };
        if (role == "param") {
            place(w.params, name);
            ++params_seen;
        } else if (role == "buffer") {
            place(w.buffers, name);
            ++buffers_seen;
        } else if (role == "adam_m" || role == "adam_v") {
            if (!adam) throw std::runtime_error("checkpoint: optimizer tensor without optimizer header");
            const std::string prefix = role == "adam_m" ? "adam.m." : "adam.v.";
            const std::string param = name.substr(prefix.size());
            auto it = w.params.find(param);
            if (name.rfind(prefix, 0) != 0 || it == w.params.end() || it->second.shape != shape)
                throw std::runtime_error("checkpoint: inconsistent optimizer tensor " + name);
            (role == "adam_m" ? adam->m : adam->v)[param] = std::move(values);
        } else {
            throw std::runtime_error("checkpoint: unknown role " + role);
        }
    }
    if (params_seen != w.params.size() || buffers_seen != w.buffers.size())
        throw std::runtime_error("checkpoint: tensor table does not cover the model");
    if (expected_offset != payload.size()) throw std::runtime_error("checkpoint: trailing bytes after payload");
    ck.optimizer = std::move(adam);
    return ck;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
    const std::string bytes = checkpoint_bytes(checkpoint);
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw std::runtime_error("write failed: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    try {
        return checkpoint_from_bytes(ss.str());
    } catch (const std::exception& e) {
        throw std::runtime_error(path.string() + ": " + e.what());
    }
}

}  // namespace myograph::train
