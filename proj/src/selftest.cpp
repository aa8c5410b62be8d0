#include "myograph/selftest.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <random>
#include <sstream>

#include "myograph/models.hpp"
#include "myograph/ops.hpp"
#include "myograph/synthgen.hpp"
#include "myograph/training.hpp"

namespace myograph::selftest {

using ad::GradCheckCase;
using ad::Shape;
using ad::Tape;
using ad::Tensor;

namespace {

struct Gen {
    std::mt19937_64 rng;
    explicit Gen(std::uint64_t seed) : rng(seed) {}
    double uniform(double lo, double hi) { return lo + (hi - lo) * (static_cast<double>(rng() >> 11) * 0x1.0p-53); }
    std::vector<double> values(const Shape& s, double lo = -1, double hi = 1) {
        std::vector<double> v(ad::numel(s));
        for (auto& x : v) x = uniform(lo, hi);
        return v;
    }
    // Magnitudes in [0.1, 1], random sign: keeps entries away from ReLU kinks.
    std::vector<double> away_from_zero(const Shape& s) {
        auto v = values(s, 0.1, 1.0);
        for (auto& x : v)
            if (rng() & 1) x = -x;
        return v;
    }
};

// Case whose loss is mse(op(leaves), fixed target).
GradCheckCase make_case(std::string name, std::vector<std::string> names, std::vector<Shape> shapes,
                        std::vector<std::vector<double>> values, Shape out_shape, Gen& g,
                        std::function<Tensor(Tape&, const std::vector<Tensor>&)> op) {
    auto target = g.values(out_shape);
    GradCheckCase c;
    c.name = std::move(name);
    c.param_names = std::move(names);
    c.shapes = std::move(shapes);
    c.values = std::move(values);
    c.build = [op = std::move(op), target, out_shape](Tape& tape, const std::vector<Tensor>& p) {
        Tensor y = op(tape, p);
        return ad::mse(tape, y, tape.constant(out_shape, target));
    };
    return c;
}

}  // namespace

std::vector<GradCheckCase> op_cases(std::uint64_t seed) {
    Gen g(seed);
    std::vector<GradCheckCase> cases;
    auto name = [](ad::OpKind k) { return std::string(ad::op_name(k)); };
    using ad::OpKind;

    cases.push_back(make_case(name(OpKind::matmul), {"a", "b"}, {{3, 4}, {4, 2}}, {g.values({3, 4}), g.values({4, 2})},
                              {3, 2}, g, [](Tape& t, const auto& p) { return ad::matmul(t, p[0], p[1]); }));
    cases.push_back(make_case(name(OpKind::transpose), {"x"}, {{2, 3, 4}}, {g.values({2, 3, 4})}, {2, 4, 3}, g,
                              [](Tape& t, const auto& p) { return ad::transpose(t, p[0]); }));
    cases.push_back(make_case(name(OpKind::reshape), {"x"}, {{2, 6}}, {g.values({2, 6})}, {3, 4}, g,
                              [](Tape& t, const auto& p) { return ad::reshape(t, p[0], {3, 4}); }));
    cases.push_back(make_case(name(OpKind::add), {"a", "b"}, {{3, 4}, {3, 4}}, {g.values({3, 4}), g.values({3, 4})}, {3, 4},
                              g, [](Tape& t, const auto& p) { return ad::add(t, p[0], p[1]); }));
    cases.push_back(make_case(name(OpKind::mul_scalar), {"x"}, {{3, 4}}, {g.values({3, 4})}, {3, 4}, g,
                              [](Tape& t, const auto& p) { return ad::mul_scalar(t, p[0], 1.7); }));
    {
        auto scale = g.values({4}, 0.5, 2.0), shift = g.values({4});
        cases.push_back(make_case(name(OpKind::scale_shift), {"x"}, {{3, 4}}, {g.values({3, 4})}, {3, 4}, g,
                                  [scale, shift](Tape& t, const auto& p) { return ad::scale_shift(t, p[0], scale, shift); }));
    }
    cases.push_back(make_case(name(OpKind::relu), {"x"}, {{3, 4}}, {g.away_from_zero({3, 4})}, {3, 4}, g,
                              [](Tape& t, const auto& p) { return ad::relu(t, p[0]); }));
    cases.push_back(make_case(name(OpKind::layer_norm), {"x", "gain", "bias"}, {{3, 5}, {5}, {5}},
                              {g.values({3, 5}), g.values({5}, 0.5, 1.5), g.values({5})}, {3, 5}, g,
                              [](Tape& t, const auto& p) { return ad::layer_norm(t, p[0], p[1], p[2]); }));
    cases.push_back(make_case(name(OpKind::softmax_lastdim), {"x"}, {{3, 4}}, {g.values({3, 4}, -2, 2)}, {3, 4}, g,
                              [](Tape& t, const auto& p) { return ad::softmax_lastdim(t, p[0]); }));
    cases.push_back(make_case(name(OpKind::linear), {"x", "weight", "bias"}, {{3, 4}, {2, 4}, {2}},
                              {g.values({3, 4}), g.values({2, 4}), g.values({2})}, {3, 2}, g,
                              [](Tape& t, const auto& p) { return ad::linear(t, p[0], p[1], p[2]); }));
    cases.push_back(make_case(name(OpKind::concat), {"a", "b"}, {{3, 2}, {3, 3}}, {g.values({3, 2}), g.values({3, 3})},
                              {3, 5}, g, [](Tape& t, const auto& p) {
                                  std::vector<Tensor> parts{p[0], p[1]};
                                  return ad::concat(t, parts);
                              }));
    cases.push_back(make_case(name(OpKind::slice_lastdim), {"x"}, {{3, 5}}, {g.values({3, 5})}, {3, 3}, g,
                              [](Tape& t, const auto& p) { return ad::slice_lastdim(t, p[0], 1, 4); }));
    {
        GradCheckCase c;
        c.name = name(OpKind::mse);
        c.param_names = {"pred", "target"};
        c.shapes = {{3, 4}, {3, 4}};
        c.values = {g.values({3, 4}), g.values({3, 4})};
        c.build = [](Tape& t, const std::vector<Tensor>& p) { return ad::mse(t, p[0], p[1]); };
        cases.push_back(std::move(c));
    }
    cases.push_back(make_case(name(OpKind::conv1d_temporal), {"x", "kernel", "bias"}, {{2, 3, 5}, {4, 3, 3}, {4}},
                              {g.values({2, 3, 5}), g.values({4, 3, 3}), g.values({4})}, {2, 4, 5}, g,
                              [](Tape& t, const auto& p) { return ad::conv1d_temporal(t, p[0], p[1], p[2]); }));
    cases.push_back(make_case(name(OpKind::conv2d), {"x", "kernel", "bias"}, {{2, 2, 4, 3}, {3, 2, 2, 3}, {3}},
                              {g.values({2, 2, 4, 3}), g.values({3, 2, 2, 3}), g.values({3})}, {2, 3, 3, 3}, g,
                              [](Tape& t, const auto& p) { return ad::conv2d(t, p[0], p[1], p[2]); }));
    cases.push_back(make_case(name(OpKind::batch_norm), {"x", "gamma", "beta"}, {{3, 2, 2, 3}, {2}, {2}},
                              {g.values({3, 2, 2, 3}), g.values({2}, 0.5, 1.5), g.values({2})}, {3, 2, 2, 3}, g,
                              [](Tape& t, const auto& p) {
                                  ad::BatchNormState st;
                                  st.training = true;
                                  return ad::batch_norm(t, p[0], p[1], p[2], st);
                              }));
    cases.push_back(make_case(name(OpKind::attention), {"q", "k", "v"}, {{6, 4}, {6, 4}, {6, 4}},
                              {g.values({6, 4}), g.values({6, 4}), g.values({6, 4})}, {6, 4}, g,
                              [](Tape& t, const auto& p) { return ad::multi_head_attention(t, p[0], p[1], p[2], 2, 3); }));
    return cases;
}

namespace {

GradCheckCase model_case(std::string name, Model model, std::size_t batch, std::size_t steps, Gen& g) {
    WindowBatch b;
    b.batch = batch;
    b.steps = steps;
    b.inputs = g.values({batch, steps, kInputDim}, 0.0, 1.0);
    b.targets = g.values({batch, steps, kMuscleCount}, 0.0, 3.0);
    auto shared = std::make_shared<Model>(std::move(model));
    GradCheckCase c;
    c.name = std::move(name);
    for (const auto& [pname, arr] : shared->weights().params) {
        c.param_names.push_back(pname);
        c.shapes.push_back(arr.shape);
        c.values.push_back(arr.values);
    }
    c.build = [shared, b, names = c.param_names](Tape& tape, const std::vector<Tensor>& p) {
        BoundParams bound;
        for (std::size_t i = 0; i < names.size(); ++i) bound.tensors.emplace(names[i], p[i]);
        Tensor y = shared->forward(tape, bound, b, ForwardMode::train);
        return ad::mse(tape, y, tape.constant(y.shape(), b.targets));
    };
    return c;
}

}  // namespace

std::vector<GradCheckCase> model_cases(std::uint64_t seed) {
    Gen g(seed ^ 0x5eedULL);
    std::vector<GradCheckCase> cases;
    cases.push_back(model_case("transformer", Model::transformer(TransformerConfig{}, seed), 2, 6, g));
    cases.push_back(model_case("cnn", Model::cnn(CnnConfig{}, seed), 2, 5, g));
    return cases;
}

namespace {

CheckResult grad_result(const GradCheckCase& c, const ad::GradCheckOptions& o) {
    CheckResult r;
    r.group = "gradient";
    r.name = c.name;
    r.threshold = kGradTolerance;
    try {
        auto res = ad::grad_check(c, o);
        r.value = res.max_rel_error;
        r.passed = res.max_rel_error < kGradTolerance;
        std::ostringstream d;
        d << res.entries_checked << " entries, worst " << res.worst_param << "[" << res.worst_index << "]";
        r.detail = d.str();
    } catch (const std::exception& e) {
        r.passed = false;
        r.value = INFINITY;
        r.detail = e.what();
    }
    return r;
}

}  // namespace

std::vector<CheckResult> gradient_checks(std::uint64_t seed, std::size_t model_entries_per_param) {
    std::vector<CheckResult> out;
    ad::GradCheckOptions o;
    o.eps = kGradEps;
    o.seed = seed;
    for (const auto& c : op_cases(seed)) out.push_back(grad_result(c, o));
    o.entries_per_param = model_entries_per_param;
    for (const auto& c : model_cases(seed)) out.push_back(grad_result(c, o));
    return out;
}

ActivationMeans exercise_means(Exercise exercise, std::size_t seeds, double duration_s) {
    ActivationMeans m;
    m.per_muscle.assign(kMuscles, 0.0);
    const synth::SubjectParams subject;
    for (std::size_t s = 0; s < seeds; ++s) {
        auto out = synth::generate_clip_detailed(exercise, subject, duration_s, 101 + s);
        const std::size_t frames = out.terms.activation.size() / kMuscles;
        for (std::size_t t = 0; t < frames; ++t)
            for (std::size_t k = 0; k < kMuscles; ++k)
                m.per_muscle[k] += out.terms.activation[t * kMuscles + k] / static_cast<double>(frames * seeds);
    }
    return m;
}

HoldProfile hold_profile() {
    constexpr std::size_t kRest = 100, kRaise = 10, kHold = 90;
    const std::size_t right = static_cast<std::size_t>(synth::Side::kRight);
    std::vector<synth::Pose> traj;
    for (std::size_t t = 0; t < kRest + kRaise + kHold; ++t) {
        synth::Pose p = synth::neutral_pose();
        double u = t < kRest ? 0.0 : t < kRest + kRaise ? static_cast<double>(t - kRest) / kRaise : 1.0;
        u = 0.5 - 0.5 * std::cos(3.141592653589793 * u);
        p.elbow_flex[right] = u * 1.5707963267948966;
        traj.push_back(p);
    }
    auto terms = synth::muscle_oracle(traj, synth::SubjectParams{});
    const std::size_t m = index_of(Muscle::RightBicep);
    HoldProfile h;
    h.onset = traj.size();
    for (std::size_t t = kRest; t < traj.size(); ++t)
        if (terms.hold[t * kMuscles + m] > 0) {
            h.onset = t;
            break;
        }
    for (std::size_t t = h.onset; t < traj.size(); ++t) h.activation.push_back(terms.activation[t * kMuscles + m]);
    return h;
}

std::vector<CheckResult> oracle_contracts() {
    std::vector<CheckResult> out;
    auto mean = [](Exercise e, Muscle m) { return exercise_means(e).per_muscle[index_of(m)]; };
    auto ratio = [&](std::string name, Exercise hi, Exercise lo, Muscle m) {
        const double a = mean(hi, m), b = mean(lo, m);
        CheckResult r{"oracle", std::move(name), false, 0, 0, ""};
        r.value = b > 0 ? a / b : (a > 0 ? INFINITY : 0.0);
        r.threshold = kContractRatio;
        r.passed = r.value >= kContractRatio;
        std::ostringstream d;
        d << muscle_name(m) << " " << exercise_name(hi) << " " << a << " vs " << exercise_name(lo) << " " << b;
        r.detail = d.str();
        out.push_back(r);
    };
    ratio("hamstring LegBack/FrontKick", Exercise::LegBack, Exercise::FrontKick, Muscle::RightHamstring);
    ratio("quad SideLunge/Skater", Exercise::SideLunge, Exercise::Skater, Muscle::LeftQuad);
    {
        // The punching arm differs by program; take the stronger tricep of each.
        auto tri = [](Exercise e) {
            auto v = exercise_means(e).per_muscle;
            return std::max(v[index_of(Muscle::LeftTricep)], v[index_of(Muscle::RightTricep)]);
        };
        const double a = tri(Exercise::HookPunch), b = tri(Exercise::ElbowPunch);
        CheckResult r{"oracle", "tricep HookPunch/ElbowPunch", false, 0, 0, ""};
        r.value = b > 0 ? a / b : (a > 0 ? INFINITY : 0.0);
        r.threshold = kContractRatio;
        r.passed = r.value >= kContractRatio;
        std::ostringstream d;
        d << "tricep HookPunch " << a << " vs ElbowPunch " << b;
        r.detail = d.str();
        out.push_back(r);
    }
    {
        auto w = exercise_means(Exercise::Woodchop).per_muscle;
        auto e = exercise_means(Exercise::ElbowPunch).per_muscle;
        const double w_quad = std::min(w[index_of(Muscle::LeftQuad)], w[index_of(Muscle::RightQuad)]);
        double w_arm = 0;
        for (Muscle m : {Muscle::LeftBicep, Muscle::RightBicep, Muscle::LeftTricep, Muscle::RightTricep})
            w_arm = std::max(w_arm, w[index_of(m)]);
        const double e_quad = std::max(e[index_of(Muscle::LeftQuad)], e[index_of(Muscle::RightQuad)]);
        CheckResult r{"oracle", "woodchop quads+arms, elbow-punch no quads", false, 0, 0, ""};
        r.value = std::min({w_quad / kActiveLevel, w_arm / kActiveLevel, kInactiveLevel / std::max(e_quad, 1e-12)});
        r.threshold = 1.0;
        r.passed = w_quad >= kActiveLevel && w_arm >= kActiveLevel && e_quad < kInactiveLevel;
        std::ostringstream d;
        d << "Woodchop quad " << w_quad << " arm " << w_arm << ", ElbowPunch quad " << e_quad;
        r.detail = d.str();
        out.push_back(r);
    }
    {
        const auto h = hold_profile();
        CheckResult r{"oracle", "hold dynamics", false, 0, 0, ""};
        r.threshold = 0;
        if (h.activation.size() < 61) {
            r.detail = "no hold onset found";
        } else {
            const auto first6 = h.activation.begin() + 61;
            const std::size_t peak = static_cast<std::size_t>(std::max_element(h.activation.begin(), first6) - h.activation.begin());
            const double a0 = h.activation[peak], a2 = h.activation[20], a6 = h.activation[60];
            r.passed = peak < 10 && a2 < a0 && a6 > a2;
            r.value = std::min(a0 - a2, a6 - a2);
            std::ostringstream d;
            d << "peak " << a0 << " at +" << peak / 10.0 << " s, +2 s " << a2 << ", +6 s " << a6;
            r.detail = d.str();
        }
        out.push_back(r);
    }
    return out;
}

std::vector<CheckResult> round_trips() {
    std::vector<CheckResult> out;
    auto record = [&](std::string name, bool ok, std::string detail) {
        CheckResult r{"roundtrip", std::move(name), false, 0, 0, ""};
        r.passed = ok;
        r.value = ok ? 1 : 0;
        r.threshold = 1;
        r.detail = std::move(detail);
        out.push_back(r);
    };
    try {
        auto spec = synth::default_corpus_spec(1, 3, 3, 11);
        spec.exercises = {Exercise::Squats, Exercise::Woodchop};
        const Dataset d = synth::generate_corpus(spec);
        const std::string text = dataset_to_jsonl(d);
        const Dataset back = dataset_from_jsonl(text);
        record("dataset jsonl", back.clips == d.clips && back.norm_stats == d.norm_stats && dataset_to_jsonl(back) == text, std::to_string(d.clips.size()) + " clips");
    } catch (const std::exception& e) {
        record("dataset jsonl", false, e.what());
    }
    try {
        train::Checkpoint ck{Model::transformer(TransformerConfig{}, 3)};
        train::quantize_f32(ck.model.weights());
        ck.rng_state = "42";
        const std::string bytes = train::checkpoint_bytes(ck);
        const auto back = train::checkpoint_from_bytes(bytes);
        WindowBatch b;
        b.batch = 1;
        b.steps = 4;
        Gen g(5);
        b.inputs = g.values({1, 4, kInputDim}, 0, 1);
        const bool same = back.model == ck.model && back.model.predict(b) == ck.model.predict(b) &&
                          train::checkpoint_bytes(back) == bytes;
        record("checkpoint", same, std::to_string(bytes.size()) + " bytes");
    } catch (const std::exception& e) {
        record("checkpoint", false, e.what());
    }
    try {
        synth::OracleConfig c;
        const std::string text = synth::format_oracle_config(c);
        const auto back = synth::parse_oracle_config(text);
        record("oracle config", synth::format_oracle_config(back) == text, "");
    } catch (const std::exception& e) {
        record("oracle config", false, e.what());
    }
    return out;
}

std::vector<CheckResult> run_all(std::uint64_t seed) {
    auto out = gradient_checks(seed);
    for (auto& r : oracle_contracts()) out.push_back(std::move(r));
    for (auto& r : round_trips()) out.push_back(std::move(r));
    return out;
}

}  // namespace myograph::selftest
