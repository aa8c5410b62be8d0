#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "myograph/evaluation.hpp"
#include "myograph/synthgen.hpp"

using namespace myograph;
using namespace myograph::eval;

namespace {

Window window_of(Exercise e, std::string clip, std::vector<double> emg) {
    Window w;
    w.clip_id = std::move(clip);
    w.exercise = e;
    w.length = emg.size() / kMuscles;
    w.keypoints.assign(w.length * kFrameDim, 0.5);
    w.emg = std::move(emg);
    return w;
}

SimilarityMatrix make_matrix(std::size_t n, std::vector<double> values) {
    SimilarityMatrix m;
    for (std::size_t i = 0; i < n; ++i) m.exercises.push_back(all_exercises()[i]);
    m.values = std::move(values);
    return m;
}

std::size_t line_count(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

const Dataset& tiny_corpus() {
    static const Dataset ds = [] {
        auto spec = synth::default_corpus_spec(1, 3, 6, 31);
        spec.exercises = {Exercise::Squats, Exercise::HookPunch, Exercise::LegBack};
        return synth::generate_corpus(spec);
    }();
    return ds;
}

SweepOptions quick_options(std::size_t jobs) {
    SweepOptions o;
    o.seed = 5;
    o.jobs = jobs;
    o.max_steps = 3;
    o.eval_every = 2;
    return o;
}

}  // namespace

TEST_CASE("rmse closed forms") {
    std::vector<double> gt{1, 2, 3, 4};
    CHECK(rmse(gt, gt) == 0.0);
    std::vector<double> off{11, 12, 13, 14};
    CHECK(rmse(off, gt) == doctest::Approx(10.0));
    std::vector<double> half{1, 4, 3, 6};
    CHECK(rmse(half, gt) == doctest::Approx(std::sqrt(2.0)));
    CHECK(rmse(gt, half) == rmse(half, gt));
    CHECK_THROWS_AS(rmse(std::vector<double>{1, 2}, gt), std::invalid_argument);
}

TEST_CASE("per-exercise table: passthrough, constant predictor and missing rows") {
    std::vector<Window> ws{
        window_of(Exercise::Squats, "a", std::vector<double>(8, 3.0)),
        window_of(Exercise::Squats, "b", std::vector<double>(8, 5.0)),
        window_of(Exercise::Running, "c", std::vector<double>(16, 2.0)),
    };
    auto passthrough = per_exercise_rmse(ws, [](std::span<const Window> w) {
        std::vector<double> out;
        for (const auto& x : w) out.insert(out.end(), x.emg.begin(), x.emg.end());
        return out;
    });
    for (const auto& r : passthrough.rows) CHECK(r.rmse == 0.0);
    CHECK(passthrough.mean == 0.0);

    std::vector<double> zeros(32, 0.0);
    auto t = per_exercise_rmse(ws, zeros);
    REQUIRE(t.rows.size() == 2);
    CHECK(t.rows[0].exercise == Exercise::Squats);
    CHECK(t.rows[0].rmse == doctest::Approx(std::sqrt(17.0)));  // pooled: (8*9 + 8*25) / 16
    CHECK(t.rows[0].windows == 2);
    CHECK(t.rows[1].rmse == doctest::Approx(2.0));
    CHECK(t.mean == doctest::Approx((std::sqrt(17.0) + 2.0) / 2));
    CHECK(t.missing.size() == 18);
    CHECK_FALSE(t.find(Exercise::Woodchop).has_value());
    CHECK(*t.find(Exercise::Running) == doctest::Approx(2.0));

    auto csv = per_exercise_csv(std::vector<MethodScores>{{Method::nn, t}});
    CHECK(line_count(csv) == 22);
    CHECK(csv.rfind("exercise,NN\n", 0) == 0);
    CHECK(csv.find("Woodchop,\n") != std::string::npos);
}

TEST_CASE("method names") {
    for (Method m : kAllMethods) CHECK(method_from_name(method_name(m)) == m);
    CHECK_THROWS(method_from_name("svm"));
}

TEST_CASE("seriation of the identity is the canonical order") {
    for (std::size_t n : {3u, 6u, 20u}) {
        std::vector<double> v(n * n, 0.0);
        for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1;
        auto order = seriate(make_matrix(n, v));
        std::vector<std::size_t> canonical(n);
        std::iota(canonical.begin(), canonical.end(), 0);
        CHECK(order == canonical);
    }
}

TEST_CASE("seriation keeps blocks contiguous and is band-optimal on a 6x6 miniature") {
    // Two interleaved blocks {0,2,4} and {1,3,5}.
    const std::size_t n = 6;
    std::vector<double> v(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            if (i % 2 == j % 2) v[i * n + j] = 1.0 / 3;
    auto m = make_matrix(n, v);
    auto order = seriate(m);
    std::vector<std::size_t> sorted = order;
    std::sort(sorted.begin(), sorted.end());
    CHECK(sorted == std::vector<std::size_t>{0, 1, 2, 3, 4, 5});
    std::size_t switches = 0;
    for (std::size_t i = 1; i < n; ++i) switches += order[i] % 2 != order[i - 1] % 2;
    CHECK(switches == 1);

    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    double best = 0;
    do best = std::max(best, band_mass(m, perm, 1));
    while (std::next_permutation(perm.begin(), perm.end()));
    CHECK(band_mass(m, order, 1) == doctest::Approx(best).epsilon(1e-12));
}

TEST_CASE("seriation output is a permutation for random matrices") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0, 1);
    std::vector<double> v(400);
    for (auto& x : v) x = u(rng);
    auto order = seriate(make_matrix(20, v));
    std::sort(order.begin(), order.end());
    for (std::size_t i = 0; i < 20; ++i) CHECK(order[i] == i);
}

TEST_CASE("uniform band mass") {
    CHECK(uniform_band_mass(20, 1) == doctest::Approx(58.0 / 400));
    CHECK(uniform_band_mass(1, 1) == 1.0);
    std::vector<double> flat(400, 1.0 / 20);
    std::vector<std::size_t> order(20);
    std::iota(order.begin(), order.end(), 0);
    CHECK(band_mass(make_matrix(20, flat), order) == doctest::Approx(uniform_band_mass(20)));
}

TEST_CASE("similarity matrix skips the own clip and is row-stochastic") {
    const auto& ds = tiny_corpus();
    std::vector<std::size_t> all(ds.clips.size()), test = ds.indices(Split::test);
    std::iota(all.begin(), all.end(), 0);
    auto queries = clip_windows(ds, test, *ds.norm_stats, 10, 0);
    auto index = clip_windows(ds, all, *ds.norm_stats, 10, 0);
    for (auto rep : {Representation::pose, Representation::ground_truth_emg}) {
        auto qf = window_features(queries, rep, nullptr);
        auto xf = window_features(index, rep, nullptr);
        auto m = similarity_matrix(queries, qf, index, xf);
        CHECK(m.size() == 3);
        for (std::size_t r = 0; r < m.size(); ++r) {
            double s = 0;
            for (std::size_t c = 0; c < m.size(); ++c) {
                CHECK(m.at(r, c) >= 0);
                s += m.at(r, c);
            }
            CHECK(std::abs(s - 1) < 1e-9);
        }
    }
    // Every query is also in the index; without the exclusion it would find itself.
    auto qf = window_features(queries, Representation::pose, nullptr);
    std::vector<Window> self_only(queries.begin(), queries.begin() + 1);
    std::vector<std::vector<double>> self_f(qf.begin(), qf.begin() + 1);
    CHECK_THROWS(similarity_matrix(self_only, self_f, self_only, self_f));
    CHECK_THROWS(window_features(queries, Representation::predicted_emg, nullptr));
}

TEST_CASE("noise-free ground-truth emg retrieval is close to the identity") {
    auto spec = synth::default_corpus_spec(1, 3, 12, 41);
    spec.oracle.noise_sigma = 0;
    spec.exercises = {Exercise::LegBack, Exercise::HookPunch, Exercise::Squats, Exercise::SideLunge};
    auto ds = synth::generate_corpus(spec);
    std::vector<std::size_t> all(ds.clips.size());
    std::iota(all.begin(), all.end(), 0);
    auto queries = clip_windows(ds, ds.indices(Split::test), *ds.norm_stats, 30, 0);
    auto index = clip_windows(ds, all, *ds.norm_stats, 30, 0);
    auto m = similarity_matrix(queries, window_features(queries, Representation::ground_truth_emg, nullptr), index,
                               window_features(index, Representation::ground_truth_emg, nullptr));
    for (std::size_t r = 0; r < m.size(); ++r) {
        INFO(exercise_name(m.exercises[r]));
        CHECK(row_argmax(m, r) == r);
    }
}

TEST_CASE("report schemas and row counts") {
    LooResult loo;
    loo.methods = {Method::nn, Method::transformer};
    loo.exercises.assign(all_exercises().begin(), all_exercises().end());
    loo.rmse.assign(20, {1.5, 2.5});
    loo.mean = {1.5, 2.5};
    auto csv = loo_csv(loo);
    CHECK(line_count(csv) == 22);
    CHECK(csv.find("Mean,1.500000,2.500000\n") != std::string::npos);
    auto j = nlohmann::json::parse(loo_json(loo));
    CHECK(j["schema"] == "myograph.report");
    CHECK(j["version"] == kReportSchemaVersion);

    TemporalResult t;
    t.methods = {Method::nn, Method::cnn, Method::transformer};
    t.lengths.assign(kWindowLengths.begin(), kWindowLengths.end());
    t.rmse.assign(3, std::vector<double>(7, 4.0));
    auto tc = temporal_csv(t);
    CHECK(tc.rfind("method,0.0,0.5,1.0,1.5,2.0,2.5,3.0\n", 0) == 0);
    CHECK(line_count(tc) == 4);

    TransferResult tr;
    tr.k = {0, 4};
    tr.fine_tuned = {9, 8};
    tr.scratch = {std::nan(""), 10};
    auto trc = transfer_csv(tr);
    CHECK(trc == "k,fine_tuned,scratch\n0,9.000000,\n4,8.000000,10.000000\n");

    CHECK(format_number(-0.0000001) == "0.000000");
    CHECK(format_number(1.0 / 3) == "0.333333");
    CHECK(format_number(std::nan("")).empty());
}

TEST_CASE("svg writers emit well-formed documents") {
    auto m = make_matrix(2, {0.75, 0.25, 0.0, 1.0});
    std::vector<std::size_t> order{0, 1};
    auto svg = heatmap_svg(m, order, "pose <test>");
    CHECK(svg.find("<svg") != std::string::npos);
    CHECK(svg.find("</svg>") != std::string::npos);
    CHECK(svg.find("&lt;test&gt;") != std::string::npos);
    auto plot = line_plot_svg("t", {"a", "b"}, {1, 2, 3}, {{1, 2, 3}, {3, std::nan(""), 1}}, "x", "y");
    CHECK(plot.find("</svg>") != std::string::npos);
}

TEST_CASE("write_text creates directories and replaces atomically") {
    auto dir = std::filesystem::temp_directory_path() / "myograph_write_test";
    std::filesystem::remove_all(dir);
    write_text(dir / "sub" / "a.txt", "one");
    write_text(dir / "sub" / "a.txt", "two");
    std::ifstream in(dir / "sub" / "a.txt");
    std::string s((std::istreambuf_iterator<char>(in)), {});
    CHECK(s == "two");
    CHECK_FALSE(std::filesystem::exists(dir / "sub" / "a.txt.tmp"));
    std::filesystem::remove_all(dir);
}

TEST_CASE("parallel_for covers every index and rethrows") {
    std::vector<int> hits(50, 0);
    parallel_for(50, 4, [&](std::size_t i) { hits[i] += 1; });
    for (int h : hits) CHECK(h == 1);
    CHECK_THROWS_AS(parallel_for(10, 3,
                                 [](std::size_t i) {
                                     if (i == 7) throw std::runtime_error("boom");
                                 }),
                    std::runtime_error);
}

TEST_CASE("sweep results do not depend on the job count") {
    const auto& ds = tiny_corpus();
    auto a = in_distribution(ds, quick_options(1), 10);
    auto b = in_distribution(ds, quick_options(3), 10);
    CHECK(per_exercise_csv(a.methods) == per_exercise_csv(b.methods));
    REQUIRE(a.methods.size() == 4);
    CHECK(a.methods[0].method == Method::random);

    std::vector<Exercise> held{Exercise::HookPunch};
    auto la = leave_one_out(ds, quick_options(1), held);
    auto lb = leave_one_out(ds, quick_options(2), held);
    CHECK(loo_csv(la) == loo_csv(lb));
    CHECK(la.exercises == held);
}

TEST_CASE("temporal and transfer sweeps have the requested shape") {
    const auto& ds = tiny_corpus();
    auto opts = quick_options(2);
    opts.methods = {Method::nn, Method::transformer};
    std::vector<std::size_t> lengths{1, 10};
    auto t = temporal_sweep(ds, opts, lengths);
    CHECK(t.lengths == lengths);
    REQUIRE(t.rmse.size() == 2);
    CHECK(t.rmse[0].size() == 2);

    auto spec = synth::default_corpus_spec(2, 3, 4, 8);
    spec.exercises = {Exercise::JumpingJack, Exercise::HighKick};  // canonical indices 0 and 1
    auto two = synth::generate_corpus(spec);
    std::vector<std::size_t> ks{0, 1, 2};
    auto tr = transfer_sweep(two, "S1", "S2", ks, quick_options(2));
    CHECK(tr.k == ks);
    CHECK(tr.fine_tuned.size() == 3);
    CHECK(std::isnan(tr.scratch[0]));
    CHECK(tr.fine_tuned[0] == doctest::Approx(tr.pretrained_only));
    CHECK(std::isfinite(tr.scratch[2]));
    CHECK(line_count(transfer_csv(tr)) == 4);
}
