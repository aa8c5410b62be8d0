#include <doctest.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "myograph/evaluation.hpp"
#include "myograph/synthgen.hpp"
#include "myograph/training.hpp"

using namespace myograph;
using namespace myograph::train;

namespace {

TransformerConfig tiny_transformer() {
    TransformerConfig c;
    c.d_model = 16;
    c.layers = 1;
    c.heads = 2;
    c.ffn_hidden = 16;
    c.conv_kernel = 3;
    return c;
}

CnnConfig tiny_cnn() {
    CnnConfig c;
    c.channels = {1, 4, 4, 4, 4, 8};
    return c;
}

struct Data {
    std::vector<Window> train, val;
};

const Data& data() {
    static const Data d = [] {
        auto spec = synth::default_corpus_spec(1, 3, 4, 21);
        spec.exercises = {Exercise::Squats, Exercise::HookPunch, Exercise::LegBack};
        auto ds = synth::generate_corpus(spec);
        Data out;
        for (std::size_t i : ds.indices(Split::train)) {
            auto w = window_clip(ds.clips[i], *ds.norm_stats, 10, 5);
            out.train.insert(out.train.end(), w.begin(), w.end());
        }
        for (std::size_t i : ds.indices(Split::val)) {
            auto w = window_clip(ds.clips[i], *ds.norm_stats, 10, 10);
            out.val.insert(out.val.end(), w.begin(), w.end());
        }
        return out;
    }();
    return d;
}

TrainConfig quick_config(std::size_t steps) {
    TrainConfig c = preset_train_config("desk", ModelKind::transformer);
    c.max_steps = steps;
    c.eval_every = 5;
    c.batch_size = 4;
    c.window = 10;
    c.seed = 3;
    c.adam.learning_rate = 1e-3;
    return c;
}

ModelWeights single_scalar(double value) {
    ModelWeights w;
    w.params["w"] = NamedArray{{1}, {value}};
    return w;
}

// Splits a checkpoint into header JSON and payload, and reassembles it.
struct Parts {
    std::uint32_t version;
    nlohmann::json header;
    std::string payload;
};

Parts split(const std::string& bytes) {
    Parts p;
    std::memcpy(&p.version, bytes.data() + 4, 4);
    std::uint64_t len;
    std::memcpy(&len, bytes.data() + 8, 8);
    p.header = nlohmann::json::parse(bytes.substr(16, len));
    p.payload = bytes.substr(16 + len);
    return p;
}

std::string join(const Parts& p) {
    std::string text = p.header.dump();
    std::string out = "MIAC";
    out.append(reinterpret_cast<const char*>(&p.version), 4);
    std::uint64_t len = text.size();
    out.append(reinterpret_cast<const char*>(&len), 8);
    return out + text + p.payload;
}

void expect_rejected(const std::string& bytes, const std::string& needle) {
    try {
        checkpoint_from_bytes(bytes);
        FAIL("accepted a checkpoint that should fail with: " << needle);
    } catch (const std::exception& e) {
        INFO(std::string(e.what()));
        CHECK(std::string(e.what()).find(needle) != std::string::npos);
    }
}

Checkpoint sample_checkpoint(bool with_adam) {
    auto r = train_model(Model::transformer(tiny_transformer(), 1), quick_config(6), data().train, data().val);
    Checkpoint ck{r.model, quick_config(6), r.rng_state, {}};
    if (with_adam) ck.optimizer = r.optimizer;
    return ck;
}

}  // namespace

TEST_CASE("first Adam step on a unit gradient moves by lr/(1+eps)") {
    auto w = single_scalar(0.5);
    Adam adam(AdamConfig{.learning_rate = 1e-3});
    adam.step(w, {{"w", {1.0}}});
    CHECK(w.params["w"].values[0] - 0.5 == doctest::Approx(-1e-3 / (1 + 1e-8)).epsilon(1e-12));
    CHECK(adam.state().step == 1);

    auto neg = single_scalar(0.5);
    Adam adam2(AdamConfig{.learning_rate = 1e-3});
    adam2.step(neg, {{"w", {-4.0}}});
    CHECK(neg.params["w"].values[0] > 0.5);
}

TEST_CASE("zero gradients leave the weights unchanged") {
    auto w = single_scalar(0.25);
    Adam adam;
    for (int i = 0; i < 5; ++i) adam.step(w, {{"w", {0.0}}});
    CHECK(w.params["w"].values[0] == 0.25);
}

TEST_CASE("Adam matches a scripted scalar simulation") {
    const double lr = 0.01, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    auto w = single_scalar(1.0);
    Adam adam(AdamConfig{lr, b1, b2, eps});
    double x = 1.0, m = 0, v = 0, p1 = 1, p2 = 1;
    for (int t = 1; t <= 20; ++t) {
        double g = 2 * x - 0.3 * std::sin(t);  // gradient of a drifting quadratic
        adam.step(w, {{"w", {g}}});
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        p1 *= b1;
        p2 *= b2;
        x -= lr * (m / (1 - p1)) / (std::sqrt(v / (1 - p2)) + eps);
        CHECK(std::abs(w.params["w"].values[0] - x) < 1e-12);
    }
}

TEST_CASE("presets") {
    auto desk = preset_train_config("desk", ModelKind::transformer);
    CHECK(desk.adam.learning_rate == 1e-4);
    auto ref_t = preset_train_config("paper", ModelKind::transformer);
    auto ref_c = preset_train_config("paper", ModelKind::cnn);
    CHECK(ref_t.adam.learning_rate == 5e-6);
    CHECK(ref_t.batch_size == 32);
    CHECK(ref_c.batch_size == 8);
    CHECK(ref_t.adam.beta1 == 0.9);
    CHECK(ref_t.adam.beta2 == 0.999);
    CHECK(ref_t.adam.eps == 1e-8);
    CHECK_THROWS(preset_train_config("laptop", ModelKind::cnn));
}

TEST_CASE("one small step lowers a single example's loss") {
    const auto& train = data().train;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Model m = Model::transformer(TransformerConfig{}, seed);
        std::vector<std::size_t> one{seed * 3 % train.size()};
        auto batch = make_batch(train, one);
        m.fit_scalers(batch);
        GradientMap g;
        double before = loss_and_gradients(m, batch, g);
        Adam adam(AdamConfig{.learning_rate = 1e-6});
        train_step(m, adam, batch);
        double after = loss_and_gradients(m, batch, g);
        CHECK(after < before);
    }
}

TEST_CASE("batch gradient is the mean of per-example gradients") {
    const auto& train = data().train;
    Model m = Model::transformer(TransformerConfig{}, 5);
    std::vector<std::size_t> idx{0, 7, 13};
    auto batch = make_batch(train, idx);
    m.fit_scalers(batch);
    GradientMap full;
    loss_and_gradients(m, batch, full);
    GradientMap sum;
    for (std::size_t i : idx) {
        GradientMap g;
        std::vector<std::size_t> one{i};
        loss_and_gradients(m, make_batch(train, one), g);
        for (auto& [name, v] : g) {
            auto& s = sum[name];
            s.resize(v.size(), 0.0);
            for (std::size_t k = 0; k < v.size(); ++k) s[k] += v[k] / 3.0;
        }
    }
    double worst = 0;
    for (const auto& [name, v] : full)
        for (std::size_t k = 0; k < v.size(); ++k)
            worst = std::max(worst, std::abs(v[k] - sum[name][k]) / std::max(1.0, std::abs(v[k])));
    CHECK(worst < 1e-12);
}

TEST_CASE("learning rate zero leaves every parameter unchanged") {
    for (bool cnn : {false, true}) {
        Model m = cnn ? Model::cnn(tiny_cnn(), 2) : Model::transformer(tiny_transformer(), 2);
        auto cfg = quick_config(7);
        cfg.adam.learning_rate = 0;
        auto r = train_model(m, cfg, data().train, {});
        CHECK(r.model.weights().params == m.weights().params);
    }
}

TEST_CASE("training is deterministic and keeps the validation-best weights") {
    auto cfg = quick_config(30);
    auto a = train_model(Model::transformer(tiny_transformer(), 4), cfg, data().train, data().val);
    auto b = train_model(Model::transformer(tiny_transformer(), 4), cfg, data().train, data().val);
    CHECK(a.model == b.model);
    CHECK(a.rng_state == b.rng_state);
    REQUIRE(a.history.size() == b.history.size());
    for (std::size_t i = 0; i < a.history.size(); ++i) {
        CHECK(a.history[i].train_loss == b.history[i].train_loss);
        CHECK(a.history[i].val_rmse == b.history[i].val_rmse);
    }
    double best = a.history.front().val_rmse;
    for (const auto& p : a.history) best = std::min(best, p.val_rmse);
    CHECK(a.best_val_rmse == best);
    auto vb = make_batch(data().val);
    CHECK(eval::rmse(a.model.predict(vb), vb.targets) == doctest::Approx(best).epsilon(1e-12));
    CHECK(a.history.back().step == 30);
    CHECK(a.history[1].step == 5);
}

TEST_CASE("early stopping after the patience runs out") {
    auto cfg = quick_config(200);
    cfg.adam.learning_rate = 0;  // validation never improves
    cfg.patience = 3;
    auto r = train_model(Model::transformer(tiny_transformer(), 4), cfg, data().train, data().val);
    CHECK(r.stopped_early);
    CHECK(r.steps_run == 15);
    CHECK(r.best_step == 0);
}

TEST_CASE("non-finite loss aborts with the step number") {
    auto train = std::vector<Window>(data().train.begin(), data().train.begin() + 4);
    train[2].emg[0] = std::nan("");
    auto cfg = quick_config(10);
    try {
        Model m = Model::transformer(tiny_transformer(), 1);
        train_model(m, cfg, train, {}, false);
        FAIL("NaN target trained");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find("non-finite loss at step") != std::string::npos);
    }
}

TEST_CASE("fine-tuning") {
    auto pre = train_model(Model::transformer(tiny_transformer(), 1), quick_config(10), data().train, data().val);
    SUBCASE("no data returns the checkpoint weights") {
        auto r = fine_tune(pre.model, quick_config(10), {}, data().val);
        CHECK(r.model == pre.model);
    }
    SUBCASE("all data equals training from the checkpoint") {
        auto cfg = quick_config(10);
        auto a = fine_tune(pre.model, cfg, data().train, data().val);
        auto b = train_model(pre.model, cfg, data().train, data().val, false);
        CHECK(a.model == b.model);
        CHECK(a.model.weights().buffers == pre.model.weights().buffers);
        CHECK_FALSE(a.model.weights().params == pre.model.weights().params);
    }
}

TEST_CASE("config json round-trips") {
    TransformerConfig t = tiny_transformer();
    t.positional_encoding = false;
    CHECK(std::get<TransformerConfig>(parse_model_config_json(model_config_json(t))) == t);
    CHECK(std::get<CnnConfig>(parse_model_config_json(model_config_json(tiny_cnn()))) == tiny_cnn());
    auto c = quick_config(17);
    c.max_val_windows = 9;
    CHECK(parse_train_config_json(train_config_json(c)) == c);
}

TEST_CASE("checkpoint round trip is bit-exact at single precision") {
    for (bool cnn : {false, true}) {
        Model m = cnn ? Model::cnn(tiny_cnn(), 3) : Model::transformer(tiny_transformer(), 3);
        Checkpoint ck{m, quick_config(1), "state", AdamState{}};
        auto bytes = checkpoint_bytes(ck);
        auto back = checkpoint_from_bytes(bytes);
        ModelWeights q = m.weights();
        quantize_f32(q);
        CHECK(back.model.weights() == q);
        CHECK(back.rng_state == "state");
        CHECK(back.config == ck.config);
        CHECK(checkpoint_bytes(back) == bytes);
        auto batch = make_batch(data().val);
        auto reload = checkpoint_from_bytes(checkpoint_bytes(back));
        CHECK(reload.model.predict(batch) == back.model.predict(batch));
    }
}

TEST_CASE("checkpoint layout") {
    auto bytes = checkpoint_bytes(sample_checkpoint(true));
    CHECK(bytes.substr(0, 4) == "MIAC");
    auto p = split(bytes);
    CHECK(p.version == 1);
    std::string previous;
    std::size_t offset = 0;
    for (const auto& t : p.header["tensors"]) {
        CHECK(t["dtype"] == "f32");
        CHECK(t["name"].get<std::string>() > previous);
        previous = t["name"];
        CHECK(t["offset"].get<std::size_t>() == offset);
        std::size_t n = 1;
        for (auto e : t["shape"]) n *= e.get<std::size_t>();
        offset += 4 * n;
    }
    CHECK(offset == p.payload.size());
    CHECK(p.header["config"].contains("model"));
    CHECK(p.header["config"].contains("train"));
    CHECK(p.header.contains("rng_state"));
}

TEST_CASE("optimizer state survives the round trip and resumes") {
    auto ck = sample_checkpoint(true);
    auto back = checkpoint_from_bytes(checkpoint_bytes(ck));
    REQUIRE(back.optimizer.has_value());
    CHECK(back.optimizer->step == ck.optimizer->step);
    CHECK(back.optimizer->m.size() == ck.model.weights().params.size());
    auto adam = resume_optimizer(back);
    CHECK(adam.state().step == 6);
}

TEST_CASE("checkpoint without optimizer state is inference-only") {
    auto back = checkpoint_from_bytes(checkpoint_bytes(sample_checkpoint(false)));
    CHECK_FALSE(back.optimizer.has_value());
    CHECK_NOTHROW(back.model.predict(make_batch(data().val)));
    CHECK_THROWS_WITH(resume_optimizer(back), doctest::Contains("inference only"));
}

TEST_CASE("corrupted checkpoints are rejected") {
    const auto good = checkpoint_bytes(sample_checkpoint(true));
    auto bad = good;
    bad[1] = 'X';
    expect_rejected(bad, "magic");
    expect_rejected(good.substr(0, 10), "magic");

    auto p = split(good);
    p.version = 2;
    expect_rejected(join(p), "version");

    expect_rejected(good.substr(0, good.size() - 3), "truncated payload");
    expect_rejected(good + "xxxx", "trailing");
    expect_rejected(good.substr(0, 40), "truncated header");

    p = split(good);
    p.header["tensors"][0]["shape"] = {3, 3};
    expect_rejected(join(p), "");
    p = split(good);
    p.header["tensors"][1]["offset"] = 12;
    expect_rejected(join(p), "offset");
    p = split(good);
    std::swap(p.header["tensors"][0], p.header["tensors"][1]);
    {
        // keep offsets consistent so only the ordering is wrong
        auto& ts = p.header["tensors"];
        ts[0]["offset"] = 0;
        ts[1]["offset"] = 4 * ad::numel(ts[0]["shape"].get<ad::Shape>());
    }
    expect_rejected(join(p), "sorted");
    p = split(good);
    p.header["tensors"].erase(p.header["tensors"].size() - 1);
    expect_rejected(join(p), "");

    // A shape that keeps the byte count but not the model's layout.
    p = split(good);
    for (auto& t : p.header["tensors"])
        if (t["name"] == "head.weight") t["shape"] = {16, 8};
    expect_rejected(join(p), "shape");
}

TEST_CASE("checkpoint files") {
    auto dir = std::filesystem::temp_directory_path() / "myograph_ck_test";
    std::filesystem::create_directories(dir);
    auto ck = sample_checkpoint(true);
    save_checkpoint(ck, dir / "a.miac");
    save_checkpoint(ck, dir / "b.miac");
    std::ifstream a(dir / "a.miac", std::ios::binary), b(dir / "b.miac", std::ios::binary);
    std::string sa((std::istreambuf_iterator<char>(a)), {}), sb((std::istreambuf_iterator<char>(b)), {});
    CHECK(sa == sb);
    CHECK(load_checkpoint(dir / "a.miac").model == checkpoint_from_bytes(sa).model);
    {
        std::ofstream out(dir / "bad.miac", std::ios::binary);
        out << "nope";
    }
    CHECK_THROWS_WITH(load_checkpoint(dir / "bad.miac"), doctest::Contains("bad.miac"));
    CHECK_THROWS(load_checkpoint(dir / "missing.miac"));
    std::filesystem::remove_all(dir);
}

TEST_CASE("identical training runs give byte-identical checkpoints") {
    CHECK(checkpoint_bytes(sample_checkpoint(true)) == checkpoint_bytes(sample_checkpoint(true)));
}
