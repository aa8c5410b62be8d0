#include "myograph/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <exception>
#include <fstream>
#include <limits>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "json.hpp"
#include "myograph/synthgen.hpp"

namespace myograph::eval {

using nlohmann::json;
using train::ModelKind;

double rmse(std::span<const double> pred, std::span<const double> target) {
    if (pred.size() != target.size())
        throw std::invalid_argument("rmse: prediction has " + std::to_string(pred.size()) + " values, target " +
                                    std::to_string(target.size()));
    if (pred.empty()) throw std::invalid_argument("rmse: empty input");
    double s = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        double d = pred[i] - target[i];
        s += d * d;
    }
    return std::sqrt(s / static_cast<double>(pred.size()));
}

std::optional<double> PerExerciseTable::find(Exercise e) const {
    for (const auto& r : rows)
        if (r.exercise == e) return r.rmse;
    return std::nullopt;
}

PerExerciseTable per_exercise_rmse(std::span<const Window> windows, std::span<const double> pred) {
    std::array<double, kExercises> sse{};
    std::array<std::size_t, kExercises> values{}, count{};
    std::size_t offset = 0;
    for (const auto& w : windows) {
        const std::size_t n = w.length * kMuscles;
        if (w.emg.size() != n) throw std::invalid_argument("per_exercise_rmse: window " + w.clip_id + " has bad emg size");
        if (offset + n > pred.size()) throw std::invalid_argument("per_exercise_rmse: too few predictions");
        const std::size_t e = index_of(w.exercise);
        for (std::size_t i = 0; i < n; ++i) {
            double d = pred[offset + i] - w.emg[i];
            sse[e] += d * d;
        }
        values[e] += n;
        ++count[e];
        offset += n;
    }
    if (offset != pred.size()) throw std::invalid_argument("per_exercise_rmse: too many predictions");
    PerExerciseTable t;
    for (Exercise e : all_exercises()) {
        const std::size_t i = index_of(e);
        if (count[i] == 0) {
            t.missing.push_back(e);
            continue;
        }
        t.rows.push_back({e, std::sqrt(sse[i] / static_cast<double>(values[i])), count[i]});
    }
    if (t.rows.empty()) throw std::invalid_argument("per_exercise_rmse: no windows");
    for (const auto& r : t.rows) t.mean += r.rmse;
    t.mean /= static_cast<double>(t.rows.size());
    return t;
}

PerExerciseTable per_exercise_rmse(std::span<const Window> windows, const Predictor& predictor) {
    return per_exercise_rmse(windows, predictor(windows));
}

namespace {

constexpr std::size_t kInferenceChunk = 256;

template <class Fn>
std::vector<double> chunked(std::span<const Window> windows, Fn&& fn) {
    std::vector<double> out;
    for (std::size_t lo = 0; lo < windows.size(); lo += kInferenceChunk) {
        auto part = windows.subspan(lo, std::min(kInferenceChunk, windows.size() - lo));
        auto v = fn(train::make_batch(part));
        out.insert(out.end(), v.begin(), v.end());
    }
    return out;
}

}  // namespace

std::vector<double> predict_windows(const Model& model, std::span<const Window> windows) {
    return chunked(windows, [&](const WindowBatch& b) { return model.predict(b); });
}

std::vector<double> embed_windows(const Model& model, std::span<const Window> windows) {
    if (!model.is_transformer()) throw std::invalid_argument("embeddings need a transformer");
    Model copy = model;
    return chunked(windows, [&](const WindowBatch& b) {
        ad::Tape tape;
        ForwardTrace trace;
        copy.forward(tape, copy.bind(tape), b, ForwardMode::eval, &trace);
        return trace.embeddings;
    });
}

std::vector<Window> clip_windows(const Dataset& dataset, std::span<const std::size_t> clips, const NormStats& stats,
                                 std::size_t length, std::size_t stride) {
    std::vector<Window> out;
    for (std::size_t i : clips) {
        auto w = window_clip(dataset.clips.at(i), stats, length, stride == 0 ? length : stride);
        std::move(w.begin(), w.end(), std::back_inserter(out));
    }
    return out;
}

std::string_view method_name(Method m) {
    switch (m) {
        case Method::transformer: return "transformer";
        case Method::cnn: return "cnn";
        case Method::nn: return "nn";
        case Method::random: return "random";
    }
    return "";
}

Method method_from_name(std::string_view name) {
    for (Method m : kAllMethods)
        if (method_name(m) == name) return m;
    throw std::invalid_argument("unknown method: " + std::string(name));
}

namespace {

std::string_view method_label(Method m) {
    switch (m) {
        case Method::transformer: return "Transformer";
        case Method::cnn: return "CNN";
        case Method::nn: return "NN";
        case Method::random: return "Random";
    }
    return "";
}

bool is_learned(Method m) { return m == Method::transformer || m == Method::cnn; }
ModelKind kind_of(Method m) { return m == Method::transformer ? ModelKind::transformer : ModelKind::cnn; }

std::vector<std::size_t> select(const Dataset& d, const std::function<bool(const Clip&, Split)>& keep) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < d.clips.size(); ++i) {
        auto it = d.splits.find(d.clips[i].clip_id);
        if (it == d.splits.end()) throw std::invalid_argument("clip " + d.clips[i].clip_id + " has no split");
        if (keep(d.clips[i], it->second)) out.push_back(i);
    }
    return out;
}

NormStats stats_of(const Dataset& d, std::span<const std::size_t> clips) {
    std::vector<const Clip*> ptrs;
    for (std::size_t i : clips) ptrs.push_back(&d.clips[i]);
    return fit_normalizer(ptrs);
}

std::vector<double> predict_random_any(std::span<const Window> queries, const baselines::RetrievalIndex& index,
                                       std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<double> out;
    for (std::size_t q = 0; q < queries.size(); ++q) {
        const auto& e = index.at(baselines::random_choice(index.size(), rng)).emg;
        out.insert(out.end(), e.begin(), e.end());
    }
    return out;
}

struct Scored {
    std::vector<PerExerciseTable> tables;  // per method, in request order
    std::vector<train::TrainResult> trained;
};

struct Fold {
    std::span<const Window> train, val, test;
    std::size_t window;
    std::uint64_t seed;
    bool random_any = false;
};

// Learned methods are independent tasks; the rest are cheap and run inline.
std::vector<std::function<void()>> fold_tasks(const Fold& f, const SweepOptions& o, Scored& out) {
    out.tables.assign(o.methods.size(), {});
    std::size_t learned = 0;
    for (Method m : o.methods) learned += is_learned(m);
    out.trained.assign(learned, train::TrainResult{Model::transformer(TransformerConfig{}, 0)});
    std::vector<std::function<void()>> tasks;
    std::size_t slot = 0;
    for (std::size_t i = 0; i < o.methods.size(); ++i) {
        const Method m = o.methods[i];
        if (is_learned(m)) {
            const std::size_t s = slot++;
            tasks.push_back([&f, &o, &out, m, i, s] {
                const ModelKind kind = kind_of(m);
                const auto cfg = [&] {
                    auto c = sweep_train_config(o, kind, f.window);
                    c.seed = synth::mix_seed(f.seed, 2 * static_cast<std::uint64_t>(kind) + 1);
                    return c;
                }();
                Model init = train::create_model(o.preset, kind, synth::mix_seed(f.seed, 2 * static_cast<std::uint64_t>(kind) + 2));
                auto r = train::train_model(std::move(init), cfg, f.train, f.val);
                out.tables[i] = per_exercise_rmse(f.test, predict_windows(r.model, f.test));
                out.trained[s] = std::move(r);
            });
        } else {
            tasks.push_back([&f, &out, m, i] {
                baselines::RetrievalIndex index({f.train.begin(), f.train.end()});
                std::vector<double> pred;
                if (m == Method::nn) {
                    pred = baselines::predict_nn(f.test, index);
                } else if (f.random_any) {
                    pred = predict_random_any(f.test, index, synth::mix_seed(f.seed, 99));
                } else {
                    pred = baselines::predict_random(f.test, index, synth::mix_seed(f.seed, 99));
                }
                out.tables[i] = per_exercise_rmse(f.test, pred);
            });
        }
    }
    return tasks;
}

void run_tasks(std::vector<std::function<void()>>& tasks, std::size_t jobs) {
    parallel_for(tasks.size(), jobs, [&](std::size_t i) { tasks[i](); });
}

}  // namespace

SweepOptions preset_sweep_options(std::string_view preset, Protocol protocol) {
    if (preset != "desk" && preset != "paper") throw std::invalid_argument("unknown preset: " + std::string(preset));
    SweepOptions o;
    o.preset = std::string(preset);
    if (protocol == Protocol::temporal) o.methods = kTemporalMethods;
    if (protocol == Protocol::transfer) o.methods = {Method::transformer};
    if (preset == "desk") {
        if (protocol == Protocol::leave_one_out) o.max_steps = kDeskLooSteps;
        if (protocol == Protocol::temporal) o.max_steps = kDeskTemporalSteps;
        if (protocol == Protocol::transfer) o.max_steps = kDeskTransferSteps;
    }
    return o;
}

train::TrainConfig sweep_train_config(const SweepOptions& options, ModelKind kind, std::size_t window) {
    auto c = train::preset_train_config(options.preset, kind);
    if (options.max_steps) c.max_steps = *options.max_steps;
    if (options.eval_every) c.eval_every = *options.eval_every;
    if (options.patience) c.patience = *options.patience;
    c.window = window;
    c.seed = options.seed;
    return c;
}

IdResult in_distribution(const Dataset& dataset, const SweepOptions& options, std::size_t window) {
    if (!valid_window_length(window)) throw std::invalid_argument("invalid window length " + std::to_string(window));
    auto train_idx = select(dataset, [](const Clip&, Split s) { return s == Split::train; });
    auto val_idx = select(dataset, [](const Clip&, Split s) { return s == Split::val; });
    auto test_idx = select(dataset, [](const Clip&, Split s) { return s == Split::test; });
    if (train_idx.empty() || test_idx.empty()) throw std::invalid_argument("dataset needs train and test clips");
    const NormStats stats = dataset.norm_stats ? *dataset.norm_stats : stats_of(dataset, train_idx);
    const auto tr = clip_windows(dataset, train_idx, stats, window, train_stride(window));
    const auto va = clip_windows(dataset, val_idx, stats, window, 0);
    const auto te = clip_windows(dataset, test_idx, stats, window, 0);

    Fold f{tr, va, te, window, options.seed};
    Scored s;
    auto tasks = fold_tasks(f, options, s);
    run_tasks(tasks, options.jobs);
    IdResult r;
    for (std::size_t i = 0; i < options.methods.size(); ++i) r.methods.push_back({options.methods[i], s.tables[i]});
    r.trained = std::move(s.trained);
    return r;
}

LooResult leave_one_out(const Dataset& dataset, const SweepOptions& options, std::span<const Exercise> held_out) {
    std::vector<Exercise> exercises(held_out.begin(), held_out.end());
    if (exercises.empty()) {
        std::set<Exercise> present;
        for (const auto& c : dataset.clips) present.insert(c.exercise);
        for (Exercise e : all_exercises())
            if (present.count(e)) exercises.push_back(e);
    }
    const std::size_t n = exercises.size();

    struct FoldData {
        std::vector<Window> train, val, test;
        Fold fold;
        Scored scored;
    };
    std::vector<FoldData> folds(n);
    std::vector<std::function<void()>> tasks;
    for (std::size_t k = 0; k < n; ++k) {
        const Exercise e = exercises[k];
        auto part = split_leave_one_exercise_out(dataset, e);
        if (part.test.empty()) throw std::invalid_argument("no clips for held-out exercise " + std::string(exercise_name(e)));
        std::vector<std::size_t> tr_idx, va_idx;
        for (std::size_t i : part.train) {
            Split s = dataset.splits.at(dataset.clips[i].clip_id);
            if (s == Split::train) tr_idx.push_back(i);
            if (s == Split::val) va_idx.push_back(i);
        }
        if (tr_idx.empty()) throw std::invalid_argument("no training clips outside " + std::string(exercise_name(e)));
        const NormStats stats = stats_of(dataset, tr_idx);
        auto& fd = folds[k];
        fd.train = clip_windows(dataset, tr_idx, stats, kDefaultWindow, kTrainStride);
        fd.val = clip_windows(dataset, va_idx, stats, kDefaultWindow, 0);
        fd.test = clip_windows(dataset, part.test, stats, kDefaultWindow, 0);
        fd.fold = Fold{fd.train, fd.val, fd.test, kDefaultWindow, synth::mix_seed(options.seed, 1000 + index_of(e)), true};
        auto t = fold_tasks(fd.fold, options, fd.scored);
        std::move(t.begin(), t.end(), std::back_inserter(tasks));
    }
    run_tasks(tasks, options.jobs);

    LooResult r;
    r.methods = options.methods;
    r.exercises = exercises;
    r.mean.assign(r.methods.size(), 0.0);
    for (std::size_t k = 0; k < n; ++k) {
        std::vector<double> row;
        for (std::size_t m = 0; m < r.methods.size(); ++m) {
            row.push_back(folds[k].scored.tables[m].mean);
            r.mean[m] += row.back() / static_cast<double>(n);
        }
        r.rmse.push_back(std::move(row));
    }
    return r;
}

TemporalResult temporal_sweep(const Dataset& dataset, const SweepOptions& options, std::span<const std::size_t> lengths) {
    auto train_idx = select(dataset, [](const Clip&, Split s) { return s == Split::train; });
    auto val_idx = select(dataset, [](const Clip&, Split s) { return s == Split::val; });
    auto test_idx = select(dataset, [](const Clip&, Split s) { return s == Split::test; });
    if (train_idx.empty() || test_idx.empty()) throw std::invalid_argument("dataset needs train and test clips");
    const NormStats stats = dataset.norm_stats ? *dataset.norm_stats : stats_of(dataset, train_idx);

    struct LengthData {
        std::vector<Window> train, val, test;
        Fold fold;
        Scored scored;
    };
    std::vector<LengthData> per(lengths.size());
    std::vector<std::function<void()>> tasks;
    for (std::size_t j = 0; j < lengths.size(); ++j) {
        const std::size_t len = lengths[j];
        if (!valid_window_length(len)) throw std::invalid_argument("invalid window length " + std::to_string(len));
        auto& d = per[j];
        d.train = clip_windows(dataset, train_idx, stats, len, train_stride(len));
        d.val = clip_windows(dataset, val_idx, stats, len, 0);
        d.test = clip_windows(dataset, test_idx, stats, len, 0);
        d.fold = Fold{d.train, d.val, d.test, len, synth::mix_seed(options.seed, 2000 + len)};
        auto t = fold_tasks(d.fold, options, d.scored);
        std::move(t.begin(), t.end(), std::back_inserter(tasks));
    }
    run_tasks(tasks, options.jobs);

    TemporalResult r;
    r.methods = options.methods;
    r.lengths.assign(lengths.begin(), lengths.end());
    for (std::size_t m = 0; m < r.methods.size(); ++m) {
        std::vector<double> row;
        for (auto& d : per) row.push_back(d.scored.tables[m].mean);
        r.rmse.push_back(std::move(row));
    }
    return r;
}

TransferResult transfer_sweep(const Dataset& dataset, const std::string& subject_a, const std::string& subject_b,
                              std::span<const std::size_t> ks, const SweepOptions& options) {
    auto of = [&](const std::string& subject, Split split, std::size_t k) {
        return select(dataset, [&](const Clip& c, Split s) {
            return c.subject_id == subject && s == split && index_of(c.exercise) < k;
        });
    };
    auto a_train = of(subject_a, Split::train, kExercises);
    auto a_val = of(subject_a, Split::val, kExercises);
    auto b_test = of(subject_b, Split::test, kExercises);
    if (a_train.empty()) throw std::invalid_argument("no training clips for subject " + subject_a);
    if (b_test.empty()) throw std::invalid_argument("no test clips for subject " + subject_b);
    for (std::size_t k : ks)
        if (k > kExercises) throw std::invalid_argument("exercise count k must be at most 20");

    const NormStats stats = stats_of(dataset, a_train);
    const std::size_t w = kDefaultWindow;
    const auto cfg = sweep_train_config(options, ModelKind::transformer, w);
    const auto test = clip_windows(dataset, b_test, stats, w, 0);
    auto score = [&](const Model& m) { return per_exercise_rmse(test, predict_windows(m, test)).mean; };

    const auto tr_a = clip_windows(dataset, a_train, stats, w, kTrainStride);
    const auto va_a = clip_windows(dataset, a_val, stats, w, 0);
    auto pre_cfg = cfg;
    pre_cfg.seed = synth::mix_seed(options.seed, 3001);
    const auto pre = train::train_model(train::create_model(options.preset, ModelKind::transformer,
                                                            synth::mix_seed(options.seed, 3002)),
                                        pre_cfg, tr_a, va_a);

    TransferResult r;
    r.k.assign(ks.begin(), ks.end());
    r.pretrained_only = score(pre.model);
    r.fine_tuned.assign(ks.size(), r.pretrained_only);
    r.scratch.assign(ks.size(), std::numeric_limits<double>::quiet_NaN());

    std::vector<std::vector<Window>> trains(ks.size()), vals(ks.size());
    std::vector<std::function<void()>> tasks;
    for (std::size_t j = 0; j < ks.size(); ++j) {
        if (ks[j] == 0) continue;
        trains[j] = clip_windows(dataset, of(subject_b, Split::train, ks[j]), stats, w, kTrainStride);
        vals[j] = clip_windows(dataset, of(subject_b, Split::val, ks[j]), stats, w, 0);
        if (trains[j].empty()) throw std::invalid_argument("no training clips for subject " + subject_b);
        auto c = cfg;
        c.seed = synth::mix_seed(options.seed, 3100 + ks[j]);
        tasks.push_back([&, j, c] { r.fine_tuned[j] = score(train::fine_tune(pre.model, c, trains[j], vals[j]).model); });
        tasks.push_back([&, j, c] {
            Model init = train::create_model(options.preset, ModelKind::transformer, synth::mix_seed(options.seed, 3200 + ks[j]));
            r.scratch[j] = score(train::train_model(std::move(init), c, trains[j], vals[j]).model);
        });
    }
    run_tasks(tasks, options.jobs);
    return r;
}

std::string_view representation_name(Representation r) {
    switch (r) {
        case Representation::pose: return "pose";
        case Representation::predicted_emg: return "predicted-emg";
        case Representation::embedding: return "embedding";
        case Representation::ground_truth_emg: return "ground-truth-emg";
    }
    return "";
}

Representation representation_from_name(std::string_view name) {
    for (auto r : {Representation::pose, Representation::predicted_emg, Representation::embedding,
                   Representation::ground_truth_emg})
        if (representation_name(r) == name) return r;
    throw std::invalid_argument("unknown representation: " + std::string(name));
}

std::vector<std::vector<double>> window_features(std::span<const Window> windows, Representation rep, const Model* model) {
    std::vector<std::vector<double>> out;
    out.reserve(windows.size());
    if (rep == Representation::pose || rep == Representation::ground_truth_emg) {
        for (const auto& w : windows) out.push_back(rep == Representation::pose ? w.keypoints : w.emg);
        return out;
    }
    if (!model) throw std::invalid_argument(std::string(representation_name(rep)) + " features need a trained model");
    const auto flat = rep == Representation::predicted_emg ? predict_windows(*model, windows) : embed_windows(*model, windows);
    if (windows.empty()) return out;
    const std::size_t per = flat.size() / windows.size();
    for (std::size_t i = 0; i < windows.size(); ++i)
        out.emplace_back(flat.begin() + static_cast<std::ptrdiff_t>(i * per),
                         flat.begin() + static_cast<std::ptrdiff_t>((i + 1) * per));
    return out;
}

SimilarityMatrix similarity_matrix(std::span<const Window> queries, std::span<const std::vector<double>> query_features,
                                   std::span<const Window> index, std::span<const std::vector<double>> index_features) {
    if (queries.size() != query_features.size() || index.size() != index_features.size())
        throw std::invalid_argument("similarity_matrix: one feature vector per window required");
    if (queries.empty()) throw std::invalid_argument("similarity_matrix: no queries");
    std::vector<std::size_t> order(index.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return index[a].clip_id != index[b].clip_id ? index[a].clip_id < index[b].clip_id : index[a].start < index[b].start;
    });

    SimilarityMatrix m;
    std::array<int, kExercises> pos;
    pos.fill(-1);
    for (Exercise e : all_exercises())
        for (const auto& q : queries)
            if (q.exercise == e) {
                pos[index_of(e)] = static_cast<int>(m.exercises.size());
                m.exercises.push_back(e);
                break;
            }
    const std::size_t n = m.exercises.size();
    std::vector<double> counts(n * n, 0.0), totals(n, 0.0);
    for (std::size_t q = 0; q < queries.size(); ++q) {
        const auto& f = query_features[q];
        double best_d = std::numeric_limits<double>::infinity();
        std::optional<std::size_t> best;
        for (std::size_t i : order) {
            if (index[i].clip_id == queries[q].clip_id) continue;
            const auto& g = index_features[i];
            if (g.size() != f.size()) throw std::invalid_argument("similarity_matrix: feature size mismatch");
            double s = 0;
            std::size_t j = 0;
            for (; j < f.size(); ++j) {
                double d = f[j] - g[j];
                s += d * d;
                if (s > best_d) break;
            }
            if (j == f.size() && s < best_d) {
                best_d = s;
                best = i;
            }
        }
        if (!best) throw std::invalid_argument("similarity_matrix: no index window outside clip " + queries[q].clip_id);
        const int col = pos[index_of(index[*best].exercise)];
        if (col < 0)
            throw std::invalid_argument("similarity_matrix: retrieved exercise " +
                                        std::string(exercise_name(index[*best].exercise)) + " has no queries");
        const auto row = static_cast<std::size_t>(pos[index_of(queries[q].exercise)]);
        counts[row * n + static_cast<std::size_t>(col)] += 1;
        totals[row] += 1;
    }
    m.values.resize(n * n);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < n; ++c) m.values[r * n + c] = counts[r * n + c] / totals[r];
    return m;
}

double band_mass(const SimilarityMatrix& m, std::span<const std::size_t> order, std::size_t band) {
    const std::size_t n = m.size();
    if (order.size() != n) throw std::invalid_argument("band_mass: order size mismatch");
    double inside = 0, total = 0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            const double v = m.at(order[i], order[j]);
            total += v;
            if ((i > j ? i - j : j - i) <= band) inside += v;
        }
    return total > 0 ? inside / total : 0.0;
}

double uniform_band_mass(std::size_t n, std::size_t band) {
    if (n == 0) return 0;
    std::size_t cells = 0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) cells += (i > j ? i - j : j - i) <= band;
    return static_cast<double>(cells) / static_cast<double>(n * n);
}

std::vector<std::size_t> seriate(const SimilarityMatrix& m) {
    const std::size_t n = m.size();
    std::vector<std::size_t> best_order;
    double best_mass = -1;
    for (std::size_t start = 0; start < n; ++start) {
        std::vector<std::size_t> chain{start};
        std::vector<bool> used(n, false);
        used[start] = true;
        while (chain.size() < n) {
            const std::size_t last = chain.back();
            std::size_t pick = n;
            double gain = -1;
            for (std::size_t c = 0; c < n; ++c) {
                if (used[c]) continue;
                const double g = m.at(last, c) + m.at(c, last);
                if (g > gain) {
                    gain = g;
                    pick = c;
                }
            }
            used[pick] = true;
            chain.push_back(pick);
        }
        const double mass = band_mass(m, chain, 1);
        if (mass > best_mass) {
            best_mass = mass;
            best_order = std::move(chain);
        }
    }
    return best_order;
}

std::size_t row_argmax(const SimilarityMatrix& m, std::size_t row) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < m.size(); ++c)
        if (m.at(row, c) > m.at(row, best)) best = c;
    return best;
}

std::string format_number(double v) {
    if (std::isnan(v)) return "";
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed, 6);
    std::string s(buf, res.ptr);
    return s == "-0.000000" ? "0.000000" : s;
}

namespace {

std::string length_label(std::size_t frames) {
    // A single frame is the "~0 s" column.
    char buf[16];
    auto res = std::to_chars(buf, buf + sizeof buf, static_cast<double>(frames / 5) * 0.5, std::chars_format::fixed, 1);
    return std::string(buf, res.ptr);
}

json number(double v) { return std::isnan(v) ? json(nullptr) : json(v); }

json table_json(const PerExerciseTable& t) {
    json rows = json::array();
    for (const auto& r : t.rows)
        rows.push_back({{"exercise", exercise_name(r.exercise)}, {"rmse", r.rmse}, {"windows", r.windows}});
    json missing = json::array();
    for (Exercise e : t.missing) missing.push_back(exercise_name(e));
    return {{"rows", rows}, {"mean", t.mean}, {"missing", missing}};
}

json report(const std::string& kind) { return {{"schema", "myograph.report"}, {"version", kReportSchemaVersion}, {"kind", kind}}; }

}  // namespace

std::string per_exercise_csv(std::span<const MethodScores> scores) {
    std::ostringstream o;
    o << "exercise";
    for (const auto& s : scores) o << ',' << method_label(s.method);
    o << '\n';
    for (Exercise e : all_exercises()) {
        o << exercise_name(e);
        for (const auto& s : scores) {
            auto v = s.table.find(e);
            o << ',' << (v ? format_number(*v) : "");
        }
        o << '\n';
    }
    o << "Mean";
    for (const auto& s : scores) o << ',' << format_number(s.table.mean);
    o << '\n';
    return o.str();
}

std::string loo_csv(const LooResult& r) {
    std::ostringstream o;
    o << "exercise";
    for (Method m : r.methods) o << ',' << method_label(m);
    o << '\n';
    for (std::size_t k = 0; k < r.exercises.size(); ++k) {
        o << exercise_name(r.exercises[k]);
        for (double v : r.rmse[k]) o << ',' << format_number(v);
        o << '\n';
    }
    o << "Mean";
    for (double v : r.mean) o << ',' << format_number(v);
    o << '\n';
    return o.str();
}

std::string temporal_csv(const TemporalResult& r) {
    std::ostringstream o;
    o << "method";
    for (std::size_t len : r.lengths) o << ',' << length_label(len);
    o << '\n';
    for (std::size_t m = 0; m < r.methods.size(); ++m) {
        o << method_label(r.methods[m]);
        for (double v : r.rmse[m]) o << ',' << format_number(v);
        o << '\n';
    }
    return o.str();
}

std::string transfer_csv(const TransferResult& r) {
    std::ostringstream o;
    o << "k,fine_tuned,scratch\n";
    for (std::size_t j = 0; j < r.k.size(); ++j)
        o << r.k[j] << ',' << format_number(r.fine_tuned[j]) << ',' << format_number(r.scratch[j]) << '\n';
    return o.str();
}

std::string similarity_csv(const SimilarityMatrix& m, std::span<const std::size_t> order) {
    std::ostringstream o;
    o << "query";
    for (std::size_t c : order) o << ',' << exercise_name(m.exercises[c]);
    o << '\n';
    for (std::size_t r : order) {
        o << exercise_name(m.exercises[r]);
        for (std::size_t c : order) o << ',' << format_number(m.at(r, c));
        o << '\n';
    }
    return o.str();
}

std::string train_history_csv(const train::TrainResult& r) {
    std::ostringstream o;
    o << "step,train_loss,val_rmse\n";
    for (const auto& p : r.history)
        o << p.step << ',' << (p.step == 0 ? std::string() : format_number(p.train_loss)) << ',' << format_number(p.val_rmse)
          << '\n';
    return o.str();
}

std::string per_exercise_json(std::span<const MethodScores> scores) {
    json j = report("per_exercise_rmse");
    j["methods"] = json::object();
    for (const auto& s : scores) j["methods"][std::string(method_name(s.method))] = table_json(s.table);
    return j.dump(2) + "\n";
}

std::string loo_json(const LooResult& r) {
    json j = report("leave_one_out");
    json methods = json::array(), rows = json::array();
    for (Method m : r.methods) methods.push_back(method_name(m));
    for (std::size_t k = 0; k < r.exercises.size(); ++k) rows.push_back({{"exercise", exercise_name(r.exercises[k])}, {"rmse", r.rmse[k]}});
    j["methods"] = methods;
    j["rows"] = rows;
    j["mean"] = r.mean;
    return j.dump(2) + "\n";
}

std::string temporal_json(const TemporalResult& r) {
    json j = report("temporal");
    json methods = json::array(), labels = json::array();
    for (Method m : r.methods) methods.push_back(method_name(m));
    for (std::size_t len : r.lengths) labels.push_back(length_label(len));
    j["methods"] = methods;
    j["lengths"] = r.lengths;
    j["labels_s"] = labels;
    j["rmse"] = r.rmse;
    return j.dump(2) + "\n";
}

std::string transfer_json(const TransferResult& r) {
    json j = report("transfer");
    json ft = json::array(), sc = json::array();
    for (std::size_t i = 0; i < r.k.size(); ++i) {
        ft.push_back(number(r.fine_tuned[i]));
        sc.push_back(number(r.scratch[i]));
    }
    j["k"] = r.k;
    j["fine_tuned"] = ft;
    j["scratch"] = sc;
    j["pretrained_only"] = r.pretrained_only;
    return j.dump(2) + "\n";
}

std::string similarity_json(const SimilarityMatrix& m, std::span<const std::size_t> order, Representation rep) {
    json j = report("similarity");
    json ex = json::array(), ord = json::array(), argmax = json::array();
    for (Exercise e : m.exercises) ex.push_back(exercise_name(e));
    for (std::size_t i : order) ord.push_back(exercise_name(m.exercises[i]));
    for (std::size_t r = 0; r < m.size(); ++r) argmax.push_back(exercise_name(m.exercises[row_argmax(m, r)]));
    json rows = json::array();
    for (std::size_t r = 0; r < m.size(); ++r)
        rows.push_back(std::vector<double>(m.values.begin() + static_cast<std::ptrdiff_t>(r * m.size()),
                                           m.values.begin() + static_cast<std::ptrdiff_t>((r + 1) * m.size())));
    j["representation"] = representation_name(rep);
    j["exercises"] = ex;
    j["values"] = rows;
    j["seriation"] = ord;
    j["band_mass"] = band_mass(m, order, 1);
    j["uniform_band_mass"] = uniform_band_mass(m.size(), 1);
    j["row_argmax"] = argmax;
    return j.dump(2) + "\n";
}

namespace {

std::string xml_escape(std::string_view s) {
    std::string o;
    for (char c : s) {
        switch (c) {
            case '&': o += "&amp;"; break;
            case '<': o += "&lt;"; break;
            case '>': o += "&gt;"; break;
            case '"': o += "&quot;"; break;
            default: o += c;
        }
    }
    return o;
}

std::string fmt(double v, int digits = 1) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed, digits);
    return std::string(buf, res.ptr);
}

}  // namespace

std::string heatmap_svg(const SimilarityMatrix& m, std::span<const std::size_t> order, const std::string& title) {
    const std::size_t n = m.size();
    const double cell = 22, left = 130, top = 150;
    const double width = left + cell * static_cast<double>(n) + 20, height = top + cell * static_cast<double>(n) + 20;
    std::ostringstream o;
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt(width) << "\" height=\"" << fmt(height)
      << "\" font-family=\"sans-serif\" font-size=\"10\">\n";
    o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    o << "<text x=\"" << fmt(width / 2) << "\" y=\"16\" text-anchor=\"middle\" font-size=\"13\">" << xml_escape(title) << "</text>\n";
    for (std::size_t i = 0; i < n; ++i) {
        const std::string name = xml_escape(exercise_name(m.exercises[order[i]]));
        const double y = top + cell * static_cast<double>(i) + cell * 0.65;
        const double x = left + cell * static_cast<double>(i) + cell * 0.6;
        o << "<text x=\"" << fmt(left - 4) << "\" y=\"" << fmt(y) << "\" text-anchor=\"end\">" << name << "</text>\n";
        o << "<text transform=\"translate(" << fmt(x) << "," << fmt(top - 4) << ") rotate(-60)\">" << name << "</text>\n";
    }
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            const double v = std::clamp(m.at(order[i], order[j]), 0.0, 1.0);
            const int shade = static_cast<int>(std::lround(255 * (1 - v)));
            o << "<rect x=\"" << fmt(left + cell * static_cast<double>(j)) << "\" y=\"" << fmt(top + cell * static_cast<double>(i))
              << "\" width=\"" << fmt(cell) << "\" height=\"" << fmt(cell) << "\" fill=\"rgb(" << shade << ',' << shade
              << ",255)\" stroke=\"#ddd\"><title>" << format_number(m.at(order[i], order[j])) << "</title></rect>\n";
        }
    o << "</svg>\n";
    return o.str();
}

std::string line_plot_svg(const std::string& title, const std::vector<std::string>& series_names,
                          const std::vector<double>& xs, const std::vector<std::vector<double>>& ys,
                          const std::string& x_label, const std::string& y_label) {
    static constexpr const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
    const double w = 560, h = 360, l = 60, r = 140, t = 30, b = 45;
    double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin, ymin = xmin, ymax = -xmin;
    for (double x : xs) xmin = std::min(xmin, x), xmax = std::max(xmax, x);
    for (const auto& s : ys)
        for (double y : s)
            if (std::isfinite(y)) ymin = std::min(ymin, y), ymax = std::max(ymax, y);
    if (!std::isfinite(xmin)) xmin = 0, xmax = 1;
    if (!std::isfinite(ymin)) ymin = 0, ymax = 1;
    if (xmax == xmin) xmax = xmin + 1;
    if (ymax == ymin) ymax = ymin + 1;
    ymin = std::min(ymin, 0.0);
    auto px = [&](double x) { return l + (x - xmin) / (xmax - xmin) * (w - l - r); };
    auto py = [&](double y) { return h - b - (y - ymin) / (ymax - ymin) * (h - t - b); };

    std::ostringstream o;
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt(w) << "\" height=\"" << fmt(h)
      << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    o << "<text x=\"" << fmt(w / 2) << "\" y=\"18\" text-anchor=\"middle\" font-size=\"13\">" << xml_escape(title) << "</text>\n";
    o << "<line x1=\"" << fmt(l) << "\" y1=\"" << fmt(h - b) << "\" x2=\"" << fmt(w - r) << "\" y2=\"" << fmt(h - b)
      << "\" stroke=\"black\"/>\n";
    o << "<line x1=\"" << fmt(l) << "\" y1=\"" << fmt(t) << "\" x2=\"" << fmt(l) << "\" y2=\"" << fmt(h - b) << "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double yv = ymin + (ymax - ymin) * i / 4.0, xv = xmin + (xmax - xmin) * i / 4.0;
        o << "<text x=\"" << fmt(l - 5) << "\" y=\"" << fmt(py(yv) + 4) << "\" text-anchor=\"end\">" << fmt(yv, 2) << "</text>\n";
        o << "<text x=\"" << fmt(px(xv)) << "\" y=\"" << fmt(h - b + 15) << "\" text-anchor=\"middle\">" << fmt(xv, 1) << "</text>\n";
    }
    o << "<text x=\"" << fmt((l + w - r) / 2) << "\" y=\"" << fmt(h - 8) << "\" text-anchor=\"middle\">" << xml_escape(x_label) << "</text>\n";
    o << "<text transform=\"translate(14," << fmt((t + h - b) / 2) << ") rotate(-90)\" text-anchor=\"middle\">"
      << xml_escape(y_label) << "</text>\n";
    for (std::size_t s = 0; s < ys.size(); ++s) {
        const char* color = kColors[s % std::size(kColors)];
        o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
        bool first = true;
        for (std::size_t i = 0; i < ys[s].size() && i < xs.size(); ++i) {
            if (!std::isfinite(ys[s][i])) continue;
            o << (first ? "" : " ") << fmt(px(xs[i])) << ',' << fmt(py(ys[s][i]));
            first = false;
        }
        o << "\"/>\n";
        const std::string name = s < series_names.size() ? series_names[s] : "series " + std::to_string(s + 1);
        const double ly = t + 14 + 16 * static_cast<double>(s);
        o << "<line x1=\"" << fmt(w - r + 10) << "\" y1=\"" << fmt(ly - 4) << "\" x2=\"" << fmt(w - r + 28) << "\" y2=\""
          << fmt(ly - 4) << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
        o << "<text x=\"" << fmt(w - r + 32) << "\" y=\"" << fmt(ly) << "\">" << xml_escape(name) << "</text>\n";
    }
    o << "</svg>\n";
    return o.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write " + tmp.string());
        out << text;
        out.flush();
        if (!out) throw std::runtime_error("write failed: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
    jobs = std::max<std::size_t>(1, std::min(jobs, n));
    if (jobs == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    std::exception_ptr error;
    std::mutex mu;
    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= n || failed.load()) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard lock(mu);
                if (!error) error = std::current_exception();
                failed = true;
            }
        }
    };
    std::vector<std::thread> threads;
    for (std::size_t t = 0; t < jobs; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace myograph::eval
