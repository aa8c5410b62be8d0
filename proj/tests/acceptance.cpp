// Acceptance run on the standard fixture: one PASS/FAIL line per criterion.
//
//   myograph_acceptance [--only 2,3] [--jobs N]
//
// Criteria 2, 3 and 7 share the in-distribution models; the rest are
// independent.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "myograph/baselines.hpp"
#include "myograph/evaluation.hpp"
#include "myograph/selftest.hpp"
#include "myograph/synthgen.hpp"
#include "myograph/training.hpp"

using namespace myograph;

namespace {

struct Verdict {
    bool passed = false;
    std::string detail;
};

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", v);
    return buf;
}

Dataset fixture() { return synth::generate_corpus(synth::default_corpus_spec(2, 3, 30, 7)); }

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

struct Context {
    std::size_t jobs = 1;
    Dataset data = fixture();
    std::optional<eval::IdResult> id;
    double id_seconds = 0;

    const eval::IdResult& in_distribution() {
        if (!id) {
            auto o = eval::preset_sweep_options("desk", eval::Protocol::in_distribution);
            o.jobs = jobs;
            auto t0 = std::chrono::steady_clock::now();
            id = eval::in_distribution(data, o);
            id_seconds = seconds_since(t0);
        }
        return *id;
    }
    double id_mean(eval::Method m) {
        for (const auto& s : in_distribution().methods)
            if (s.method == m) return s.table.mean;
        throw std::logic_error("method missing from the in-distribution run");
    }
    const Model& id_transformer() {
        const auto& r = in_distribution();
        std::size_t learned = 0;
        for (const auto& s : r.methods) {
            if (s.method == eval::Method::transformer) return r.trained.at(learned).model;
            if (s.method == eval::Method::cnn) ++learned;
        }
        throw std::logic_error("no transformer in the in-distribution run");
    }
};

Verdict gradient_fidelity(Context&) {
    auto t0 = std::chrono::steady_clock::now();
    auto results = selftest::gradient_checks(0);
    double worst = 0;
    std::string failed;
    for (const auto& r : results) {
        worst = std::max(worst, r.value);
        if (!r.passed) failed += " " + r.name;
    }
    const double secs = seconds_since(t0);
    bool ok = failed.empty() && secs < 60;
    return {ok, std::to_string(results.size()) + " checks, worst rel error " + std::to_string(worst) + ", " + num(secs) +
                    " s" + (failed.empty() ? "" : ", failed:" + failed)};
}

Verdict method_ordering(Context& c) {
    const double tr = c.id_mean(eval::Method::transformer), cnn = c.id_mean(eval::Method::cnn),
                 nn = c.id_mean(eval::Method::nn), rnd = c.id_mean(eval::Method::random);
    const double gap = 0.3;
    bool ok = tr + gap <= cnn && cnn + gap <= nn && nn + gap <= rnd && c.id_seconds < 15 * 60;
    return {ok, "transformer " + num(tr) + " < cnn " + num(cnn) + " < nn " + num(nn) + " < random " + num(rnd) +
                    " (gap >= 0.3), " + num(c.id_seconds) + " s"};
}

Verdict ood_gap(Context& c) {
    const double id_tr = c.id_mean(eval::Method::transformer);
    auto t0 = std::chrono::steady_clock::now();
    auto o = eval::preset_sweep_options("desk", eval::Protocol::leave_one_out);
    o.jobs = c.jobs;
    o.methods = {eval::Method::nn, eval::Method::cnn, eval::Method::transformer};
    auto r = eval::leave_one_out(c.data, o);
    const double nn = r.mean[0], cnn = r.mean[1], tr = r.mean[2];
    bool ok = tr >= id_tr + 1.0 && cnn < nn && tr < nn;
    return {ok, "transformer OOD " + num(tr) + " vs ID " + num(id_tr) + " (need +1.0); cnn " + num(cnn) +
                    ", transformer " + num(tr) + " < nn " + num(nn) + ", " + num(seconds_since(t0)) + " s"};
}

Verdict temporal(Context& c) {
    auto o = eval::preset_sweep_options("desk", eval::Protocol::temporal);
    o.jobs = c.jobs;
    auto r = eval::temporal_sweep(c.data, o);
    const std::size_t first = 0, last = r.lengths.size() - 1;
    if (r.lengths[first] != 1 || r.lengths[last] != 30) return {false, "unexpected length grid"};
    bool ok = true;
    std::ostringstream d;
    for (std::size_t m = 0; m < r.methods.size(); ++m) {
        const auto& row = r.rmse[m];
        d << eval::method_name(r.methods[m]) << " " << num(row[first]) << "->" << num(row[last]) << "; ";
        if (r.methods[m] == eval::Method::nn)
            ok &= *std::max_element(row.begin(), row.end()) == row[first];
        else
            ok &= row[last] <= row[first] - 1.0;
    }
    return {ok, d.str() + "learned need 1->30 drop >= 1.0, nn worst at 1 frame"};
}

Verdict transfer(Context& c) {
    auto o = eval::preset_sweep_options("desk", eval::Protocol::transfer);
    o.jobs = c.jobs;
    auto r = eval::transfer_sweep(c.data, "S1", "S2", eval::kTransferGrid, o);
    bool ok = true;
    std::ostringstream d;
    for (std::size_t i = 0; i < r.k.size(); ++i) {
        const double ft = r.fine_tuned[i], sc = r.scratch[i];
        ok &= r.k[i] <= 12 ? ft < sc : ft <= sc;
        d << "k=" << r.k[i] << " " << num(ft) << "/" << num(sc) << " ";
    }
    return {ok, d.str() + "(fine-tuned/scratch)"};
}

Verdict oracle(Context&) {
    std::string failed;
    std::size_t n = 0;
    for (const auto& r : selftest::oracle_contracts()) {
        ++n;
        if (!r.passed) failed += " " + r.name + "=" + num(r.value);
    }
    return {failed.empty(), std::to_string(n) + " contracts" + (failed.empty() ? "" : ", failed:" + failed)};
}

bool row_stochastic(const eval::SimilarityMatrix& m) {
    for (std::size_t i = 0; i < m.size(); ++i) {
        double s = 0;
        for (std::size_t j = 0; j < m.size(); ++j) s += m.at(i, j);
        if (std::abs(s - 1) > 1e-9) return false;
    }
    return true;
}

Verdict representation(Context& c) {
    const Dataset& ds = c.data;
    const Model& model = c.id_transformer();
    const auto queries = eval::clip_windows(ds, ds.indices(Split::test), *ds.norm_stats, kDefaultWindow, 0);
    std::vector<std::size_t> all(ds.clips.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    const auto index = eval::clip_windows(ds, all, *ds.norm_stats, kDefaultWindow, 0);
    auto matrix = [&](eval::Representation rep) {
        return eval::similarity_matrix(queries, eval::window_features(queries, rep, &model), index,
                                       eval::window_features(index, rep, &model));
    };
    auto pose = matrix(eval::Representation::pose);
    auto emg = matrix(eval::Representation::predicted_emg);
    std::size_t differing = 0;
    for (std::size_t r = 0; r < pose.size(); ++r) differing += eval::row_argmax(pose, r) != eval::row_argmax(emg, r);
    const double mass = eval::band_mass(pose, eval::seriate(pose), 1);
    const double uniform = eval::uniform_band_mass(pose.size(), 1);
    const bool stochastic = row_stochastic(pose) && row_stochastic(emg);
    bool ok = differing >= 1 && stochastic && mass >= 3 * uniform;
    return {ok, std::to_string(differing) + " rows differ in argmax; row-stochastic " + (stochastic ? "yes" : "no") +
                    "; pose band mass " + num(mass) + " vs 3x uniform " + num(3 * uniform)};
}

Verdict determinism(Context& c) {
    std::vector<std::string> failed;
    auto need = [&](bool cond, const char* what) {
        if (!cond) failed.emplace_back(what);
    };

    // corpus
    need(dataset_to_jsonl(fixture()) == dataset_to_jsonl(c.data), "corpus bytes");

    // checkpoints and report CSVs from a short in-distribution run on a small corpus
    auto small = synth::generate_corpus(synth::default_corpus_spec(1, 3, 6, 3));
    auto run = [&] {
        eval::SweepOptions o;
        o.seed = 5;
        o.max_steps = 20;
        o.eval_every = 10;
        return eval::in_distribution(small, o);
    };
    auto a = run(), b = run();
    need(eval::per_exercise_csv(a.methods) == eval::per_exercise_csv(b.methods), "report csv");
    for (std::size_t i = 0; i < a.trained.size(); ++i) {
        train::Checkpoint ca{a.trained[i].model, {}, a.trained[i].rng_state, a.trained[i].optimizer};
        train::Checkpoint cb{b.trained[i].model, {}, b.trained[i].rng_state, b.trained[i].optimizer};
        need(train::checkpoint_bytes(ca) == train::checkpoint_bytes(cb), "checkpoint bytes");
    }

    for (const auto& r : selftest::round_trips())
        if (!r.passed) failed.push_back("round trip " + r.name);

    // NN against an exhaustive scan
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> u(0, 1);
    std::vector<Window> ws(200);
    for (std::size_t i = 0; i < ws.size(); ++i) {
        ws[i].clip_id = "c" + std::to_string(i % 13);
        ws[i].subject_id = "S1";
        ws[i].exercise = all_exercises()[i % kExercises];
        ws[i].start = i;
        ws[i].length = 3;
        ws[i].keypoints.resize(3 * kFrameDim);
        ws[i].emg.resize(3 * kMuscles);
        for (auto& v : ws[i].keypoints) v = u(rng);
        for (auto& v : ws[i].emg) v = u(rng);
    }
    baselines::RetrievalIndex index(ws);
    std::size_t mismatches = 0;
    for (int q = 0; q < 200; ++q) {
        std::vector<double> query(3 * kFrameDim);
        for (auto& v : query) v = u(rng);
        std::size_t best = 0;
        double best_d = INFINITY;
        for (std::size_t i = 0; i < index.size(); ++i) {
            double d = 0;
            for (std::size_t j = 0; j < query.size(); ++j) d += std::pow(query[j] - index.at(i).keypoints[j], 2);
            if (d < best_d) {
                best_d = d;
                best = i;
            }
        }
        mismatches += baselines::nearest(query, index) != best;
    }
    need(mismatches == 0, "nn brute force");

    std::string d = failed.empty() ? "corpus, checkpoints, csv, round trips, nn scan" : "failed:";
    for (const auto& f : failed) d += " " + f;
    return {failed.empty(), d};
}

Verdict overfit(Context& c) {
    const Dataset& ds = c.data;
    auto windows = eval::clip_windows(ds, ds.indices(Split::train), *ds.norm_stats, kDefaultWindow, 0);
    std::vector<Window> four;
    for (std::size_t i = 0; i < 4; ++i) four.push_back(windows.at(i * windows.size() / 4));
    auto cfg = train::preset_train_config("desk", train::ModelKind::transformer);
    cfg.max_steps = 2000;
    cfg.eval_every = 100;
    cfg.patience = 1000;
    cfg.batch_size = 4;
    auto r = train::train_model(train::create_model("desk", train::ModelKind::transformer, 1), cfg, four, four);
    const double train_rmse = eval::rmse(eval::predict_windows(r.model, four), train::make_batch(four).targets);
    std::string first = "never";
    for (const auto& p : r.history)
        if (p.step > 0 && p.val_rmse < 1.0) {
            first = "step " + std::to_string(p.step);
            break;
        }
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2e", train_rmse);
    return {train_rmse < 1.0, std::string("train RMSE ") + buf + " after " + std::to_string(r.steps_run) +
                                  " steps, below 1.0 from " + first + " (need < 1.0 within 2000)"};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance criteria on the standard fixture"};
    std::vector<int> only;
    std::size_t jobs = 1;
    app.add_option("--only", only, "criteria to run")->delimiter(',');
    app.add_option("--jobs", jobs)->check(CLI::PositiveNumber);
    CLI11_PARSE(app, argc, argv);

    const std::vector<std::pair<const char*, std::function<Verdict(Context&)>>> criteria{
        {"gradient fidelity", gradient_fidelity},
        {"method ordering", method_ordering},
        {"out-of-distribution gap", ood_gap},
        {"temporal monotonicity", temporal},
        {"transfer dominance", transfer},
        {"oracle contracts", oracle},
        {"representation divergence", representation},
        {"determinism and round trips", determinism},
        {"overfit sanity", overfit},
    };
    std::set<int> selected(only.begin(), only.end());
    Context ctx;
    ctx.jobs = jobs;
    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = static_cast<int>(i) + 1;
        if (!selected.empty() && !selected.count(id)) continue;
        Verdict v;
        try {
            v = criteria[i].second(ctx);
        } catch (const std::exception& e) {
            v = {false, std::string("error: ") + e.what()};
        }
        failures += !v.passed;
        std::cout << "criterion " << id << " " << criteria[i].first << ": " << (v.passed ? "PASS" : "FAIL") << " - "
                  << v.detail << std::endl;
    }
    return failures ? 1 : 0;
}
