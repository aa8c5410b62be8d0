// myograph: data generation, training, evaluation sweeps and reports.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <openssl/sha.h>

#include "CLI11.hpp"
#include "json.hpp"
#include "myograph/baselines.hpp"
#include "myograph/evaluation.hpp"
#include "myograph/selftest.hpp"
#include "myograph/synthgen.hpp"
#include "myograph/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace myograph;

namespace {

constexpr int kManifestVersion = 1;

std::string sha256(std::string_view bytes) {
    unsigned char digest[SHA256_DIGEST_LENGTH];
    SHA256(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size(), digest);
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    for (unsigned char c : digest) {
        out.push_back(kHex[c >> 4]);
        out.push_back(kHex[c & 15]);
    }
    return out;
}

std::string read_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Everything a command produces, written only once the whole run succeeded.
struct Outputs {
    std::vector<std::pair<fs::path, std::string>> files;
    void add(fs::path p, std::string text) { files.emplace_back(std::move(p), std::move(text)); }
};

struct Run {
    std::string command;
    std::vector<std::string> argv;
    json config = json::object();
    json seeds = json::object();
    std::vector<fs::path> inputs;
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
};

void commit(const Run& run, const Outputs& out, const fs::path& manifest_path) {
    std::vector<fs::path> written;
    try {
        for (const auto& [path, text] : out.files) {
            eval::write_text(path, text);
            written.push_back(path);
        }
    } catch (...) {
        for (const auto& p : written) fs::remove(p);
        throw;
    }
    json m;
    m["schema"] = "myograph.manifest";
    m["version"] = kManifestVersion;
    m["command"] = run.command;
    m["argv"] = run.argv;
    m["config"] = run.config;
    m["seeds"] = run.seeds;
    json inputs = json::array(), outputs = json::array();
    for (const auto& p : run.inputs) inputs.push_back({{"path", p.string()}, {"sha256", sha256(read_bytes(p))}});
    for (const auto& [p, text] : out.files)
        outputs.push_back({{"path", p.string()}, {"bytes", text.size()}, {"sha256", sha256(text)}});
    m["inputs"] = inputs;
    m["outputs"] = outputs;
    m["wall_clock_s"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - run.start).count();
    eval::write_text(manifest_path, m.dump(2) + "\n");
}

std::uint64_t default_seed() {
    if (const char* env = std::getenv("MYOGRAPH_SEED")) {
        try {
            std::size_t used = 0;
            auto v = std::stoull(env, &used);
            if (used == std::string_view(env).size()) return v;
        } catch (const std::exception&) {
        }
        throw std::invalid_argument(std::string("MYOGRAPH_SEED is not an unsigned integer: ") + env);
    }
    return 0;
}

fs::path splits_path_for(const fs::path& data) {
    fs::path p = data;
    p.replace_extension(".splits.json");
    return p;
}

struct LoadedData {
    Dataset dataset;
    fs::path splits_file;  // empty when default splits were assigned
};

LoadedData load_data(const fs::path& data, const std::string& splits_flag, Run& run) {
    LoadedData d;
    d.dataset = load_dataset(data);
    run.inputs.push_back(data);
    fs::path sp = splits_flag.empty() ? splits_path_for(data) : fs::path(splits_flag);
    if (!splits_flag.empty() || fs::exists(sp)) {
        d.dataset.splits = load_splits(sp);
        d.splits_file = sp;
        run.inputs.push_back(sp);
    } else {
        assign_default_splits(d.dataset);
    }
    for (const auto& c : d.dataset.clips)
        if (!d.dataset.splits.count(c.clip_id)) throw std::runtime_error("incomplete split table: clip " + c.clip_id + " has no split");
    if (d.dataset.indices(Split::train).empty()) throw std::runtime_error("dataset has no train clips");
    if (d.dataset.indices(Split::test).empty()) throw std::runtime_error("dataset has no test clips");
    if (!d.dataset.norm_stats) {
        std::vector<const Clip*> tr;
        for (auto i : d.dataset.indices(Split::train)) tr.push_back(&d.dataset.clips[i]);
        d.dataset.norm_stats = fit_normalizer(tr);
    }
    return d;
}

void require_all_exercises(const Dataset& d) {
    std::array<bool, kExercises> seen{};
    for (const auto& c : d.clips) seen[index_of(c.exercise)] = true;
    for (Exercise e : all_exercises())
        if (!seen[index_of(e)]) throw std::runtime_error("incomplete corpus: no clips for " + std::string(exercise_name(e)));
}

std::vector<eval::Method> parse_methods(const std::vector<std::string>& names) {
    std::vector<eval::Method> out;
    for (const auto& n : names) out.push_back(eval::method_from_name(n));
    return out;
}

json method_names(const std::vector<eval::Method>& ms) {
    json j = json::array();
    for (auto m : ms) j.push_back(eval::method_name(m));
    return j;
}

struct SweepFlags {
    std::string data, splits, out, preset = "desk";
    std::uint64_t seed = 0;
    std::size_t jobs = 1;
    std::vector<std::string> methods;
    std::optional<std::size_t> max_steps, eval_every, patience;
};

void add_sweep_flags(CLI::App* cmd, SweepFlags& f, bool with_methods) {
    cmd->add_option("--data", f.data, "MIA-JSONL corpus")->required();
    cmd->add_option("--splits", f.splits, "split file (default: <data>.splits.json when present)");
    cmd->add_option("--out", f.out, "output directory")->required();
    cmd->add_option("--preset", f.preset, "desk or paper")->check(CLI::IsMember({"desk", "paper"}));
    cmd->add_option("--seed", f.seed, "run seed (default: MYOGRAPH_SEED or 0)");
    cmd->add_option("--jobs", f.jobs, "parallel retrainings")->check(CLI::PositiveNumber);
    if (with_methods)
        cmd->add_option("--methods", f.methods, "subset of transformer,cnn,nn,random")->delimiter(',');
    cmd->add_option("--max-steps", f.max_steps, "override the preset step budget");
    cmd->add_option("--eval-every", f.eval_every, "override the evaluation interval");
    cmd->add_option("--patience", f.patience, "override early-stopping patience");
}

eval::SweepOptions sweep_options(const SweepFlags& f, eval::Protocol protocol) {
    auto o = eval::preset_sweep_options(f.preset, protocol);
    o.seed = f.seed;
    o.jobs = f.jobs;
    if (!f.methods.empty()) o.methods = parse_methods(f.methods);
    if (f.max_steps) o.max_steps = f.max_steps;
    if (f.eval_every) o.eval_every = f.eval_every;
    if (f.patience) o.patience = f.patience;
    return o;
}

json sweep_config(const eval::SweepOptions& o) {
    json j{{"preset", o.preset}, {"jobs", o.jobs}, {"methods", method_names(o.methods)}};
    j["max_steps"] = o.max_steps ? json(*o.max_steps) : json(nullptr);
    j["eval_every"] = o.eval_every ? json(*o.eval_every) : json(nullptr);
    j["patience"] = o.patience ? json(*o.patience) : json(nullptr);
    return j;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Pose keypoints to muscle activation: synthetic data, models, baselines and evaluation"};
    app.require_subcommand(1);
    Run run;
    for (int i = 0; i < argc; ++i) run.argv.emplace_back(argv[i]);

    std::uint64_t seed_fallback = 0;
    try {
        seed_fallback = default_seed();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }

    // gen-data
    struct {
        std::size_t subjects = 2, clips = 3;
        std::vector<std::size_t> per_subject;
        double duration = 30;
        std::uint64_t seed = 0;
        std::string out, oracle_config;
    } gen;
    gen.seed = seed_fallback;
    auto* c_gen = app.add_subcommand("gen-data", "generate a synthetic corpus");
    c_gen->add_option("--subjects", gen.subjects, "number of subjects")->check(CLI::PositiveNumber);
    c_gen->add_option("--clips-per-exercise", gen.clips, "clips per subject and exercise")->check(CLI::PositiveNumber);
    c_gen->add_option("--clips-per-subject", gen.per_subject, "per-subject clip counts, overriding the uniform count")
        ->delimiter(',');
    c_gen->add_option("--duration", gen.duration, "clip duration in seconds (at least 3)");
    c_gen->add_option("--seed", gen.seed, "corpus seed (default: MYOGRAPH_SEED or 0)");
    c_gen->add_option("--oracle-config", gen.oracle_config, "oracle constants file");
    c_gen->add_option("--out", gen.out, "output .jsonl path")->required();

    // train
    struct {
        std::string model = "transformer", data, splits, out, preset = "desk", resume;
        std::uint64_t seed = 0;
        std::optional<std::size_t> max_steps, eval_every, patience, batch_size, window;
        std::optional<double> lr;
    } tr;
    tr.seed = seed_fallback;
    auto* c_train = app.add_subcommand("train", "train a model, keeping the validation-best weights");
    c_train->add_option("--model", tr.model, "transformer or cnn")->check(CLI::IsMember({"transformer", "cnn"}));
    c_train->add_option("--data", tr.data, "MIA-JSONL corpus")->required();
    c_train->add_option("--splits", tr.splits, "split file");
    c_train->add_option("--out", tr.out, "output directory")->required();
    c_train->add_option("--preset", tr.preset, "desk or paper")->check(CLI::IsMember({"desk", "paper"}));
    c_train->add_option("--seed", tr.seed, "run seed (default: MYOGRAPH_SEED or 0)");
    c_train->add_option("--resume", tr.resume, "continue from a checkpoint with optimizer state");
    c_train->add_option("--max-steps", tr.max_steps);
    c_train->add_option("--eval-every", tr.eval_every);
    c_train->add_option("--patience", tr.patience);
    c_train->add_option("--batch-size", tr.batch_size);
    c_train->add_option("--window", tr.window, "window length in frames");
    c_train->add_option("--lr", tr.lr, "learning rate");

    // eval
    struct {
        std::string checkpoint, data, splits, split = "test", out;
        bool baselines = false;
        std::uint64_t seed = 0;
    } ev;
    ev.seed = seed_fallback;
    auto* c_eval = app.add_subcommand("eval", "per-exercise RMSE of a checkpoint");
    c_eval->add_option("--checkpoint", ev.checkpoint)->required();
    c_eval->add_option("--data", ev.data)->required();
    c_eval->add_option("--splits", ev.splits);
    c_eval->add_option("--split", ev.split)->check(CLI::IsMember({"train", "val", "test"}));
    c_eval->add_option("--out", ev.out, "output directory (default: the checkpoint's)");
    c_eval->add_flag("--baselines", ev.baselines, "add NN and Random columns");
    c_eval->add_option("--seed", ev.seed, "seed of the random baseline");

    SweepFlags loo, tmp, trf;
    loo.seed = tmp.seed = trf.seed = seed_fallback;
    auto* c_loo = app.add_subcommand("loo", "leave-one-exercise-out sweep");
    add_sweep_flags(c_loo, loo, true);
    std::vector<std::string> loo_exercises;
    c_loo->add_option("--exercises", loo_exercises, "held-out exercises (default: all)")->delimiter(',');

    auto* c_tmp = app.add_subcommand("temporal", "window-length sweep");
    add_sweep_flags(c_tmp, tmp, true);
    std::vector<std::size_t> lengths(kWindowLengths.begin(), kWindowLengths.end());
    c_tmp->add_option("--lengths", lengths, "window lengths in frames")->delimiter(',');

    auto* c_trf = app.add_subcommand("transfer", "subject transfer curves");
    add_sweep_flags(c_trf, trf, false);
    std::string subject_a, subject_b;
    std::vector<std::size_t> ks(eval::kTransferGrid.begin(), eval::kTransferGrid.end());
    c_trf->add_option("--subject-a", subject_a, "pretraining subject (default: first)");
    c_trf->add_option("--subject-b", subject_b, "target subject (default: second)");
    c_trf->add_option("--k", ks, "exercise counts")->delimiter(',');

    struct {
        std::string data, splits, out, checkpoint, preset = "desk";
        std::vector<std::string> reps;
        std::uint64_t seed = 0;
        std::optional<std::size_t> max_steps;
    } sim;
    sim.seed = seed_fallback;
    auto* c_sim = app.add_subcommand("simmatrix", "exercise retrieval similarity matrices");
    c_sim->add_option("--data", sim.data)->required();
    c_sim->add_option("--splits", sim.splits);
    c_sim->add_option("--out", sim.out)->required();
    c_sim->add_option("--rep", sim.reps, "pose, predicted-emg, embedding or ground-truth-emg (repeatable)");
    c_sim->add_option("--checkpoint", sim.checkpoint, "transformer for model representations (default: train one)");
    c_sim->add_option("--preset", sim.preset)->check(CLI::IsMember({"desk", "paper"}));
    c_sim->add_option("--seed", sim.seed);
    c_sim->add_option("--max-steps", sim.max_steps);

    struct {
        std::string fault_op;
        std::uint64_t seed = 0;
    } st;
    auto* c_self = app.add_subcommand("selftest", "gradient checks, oracle contracts and round-trips");
    c_self->add_option("--fault-op", st.fault_op, "test fixture: corrupt one op's adjoint");
    c_self->add_option("--seed", st.seed);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (c_gen->parsed()) {
            run.command = "gen-data";
            if (!(gen.duration >= synth::kMinDuration))
                throw std::invalid_argument("--duration must be at least 3 seconds");
            auto spec = synth::default_corpus_spec(gen.subjects, gen.clips, gen.duration, gen.seed);
            if (!gen.per_subject.empty()) {
                if (gen.per_subject.size() != gen.subjects)
                    throw std::invalid_argument("--clips-per-subject needs one count per subject");
                spec.clips_per_subject = gen.per_subject;
            }
            if (!gen.oracle_config.empty()) {
                spec.oracle = synth::load_oracle_config(gen.oracle_config);
                run.inputs.push_back(gen.oracle_config);
            }
            Dataset d = synth::generate_corpus(spec);
            run.config = {{"subjects", gen.subjects},
                          {"clips_per_subject", spec.clips_per_subject},
                          {"duration_s", gen.duration},
                          {"oracle", synth::format_oracle_config(spec.oracle)}};
            run.seeds = {{"corpus", gen.seed}};
            const fs::path out = gen.out;
            Outputs o;
            o.add(out, dataset_to_jsonl(d));
            json splits = {{"train", json::array()}, {"val", json::array()}, {"test", json::array()}};
            for (const auto& c : d.clips) splits[std::string(split_name(d.splits.at(c.clip_id)))].push_back(c.clip_id);
            o.add(splits_path_for(out), splits.dump(2) + "\n");
            fs::path manifest = out;
            manifest += ".manifest.json";
            commit(run, o, manifest);
            std::cout << "wrote " << d.clips.size() << " clips to " << out.string() << "\n";
            return 0;
        }

        if (c_train->parsed()) {
            run.command = "train";
            auto data = load_data(tr.data, tr.splits, run);
            const auto kind = train::model_kind_from_name(tr.model);
            auto cfg = train::preset_train_config(tr.preset, kind);
            cfg.seed = tr.seed;
            if (tr.max_steps) cfg.max_steps = *tr.max_steps;
            if (tr.eval_every) cfg.eval_every = *tr.eval_every;
            if (tr.patience) cfg.patience = *tr.patience;
            if (tr.batch_size) cfg.batch_size = *tr.batch_size;
            if (tr.window) cfg.window = *tr.window;
            if (tr.lr) cfg.adam.learning_rate = *tr.lr;
            if (!valid_window_length(cfg.window)) throw std::invalid_argument("invalid --window");

            const auto& ds = data.dataset;
            const auto train_idx = ds.indices(Split::train), val_idx = ds.indices(Split::val);
            const auto train_w = eval::clip_windows(ds, train_idx, *ds.norm_stats, cfg.window, train_stride(cfg.window));
            const auto val_w = eval::clip_windows(ds, val_idx, *ds.norm_stats, cfg.window, 0);

            std::optional<train::TrainResult> result;
            if (!tr.resume.empty()) {
                auto ck = train::load_checkpoint(tr.resume);
                run.inputs.push_back(tr.resume);
                auto adam = train::resume_optimizer(ck);
                if ((ck.model.is_transformer()) != (kind == train::ModelKind::transformer))
                    throw std::invalid_argument("--model does not match the checkpoint");
                result = train::train_model(ck.model, cfg, train_w, val_w, false, &adam.state());
            } else {
                result = train::train_model(train::create_model(tr.preset, kind, synth::mix_seed(tr.seed, 17)), cfg,
                                            train_w, val_w);
            }
            run.config = {{"model", json::parse(train::model_config_json(result->model.config()))},
                          {"train", json::parse(train::train_config_json(cfg))}};
            run.seeds = {{"run", tr.seed}, {"init", synth::mix_seed(tr.seed, 17)}};

            train::Checkpoint ck{result->model, cfg, result->rng_state, result->optimizer};
            const fs::path out = tr.out;
            Outputs o;
            o.add(out / "best.miac", train::checkpoint_bytes(ck));
            o.add(out / "loss_curve.csv", eval::train_history_csv(*result));
            std::vector<double> xs, loss, val;
            for (const auto& p : result->history) {
                if (p.step == 0) continue;
                xs.push_back(static_cast<double>(p.step));
                loss.push_back(std::sqrt(p.train_loss));
                val.push_back(p.val_rmse);
            }
            o.add(out / "loss_curve.svg", eval::line_plot_svg(tr.model + " training", {"train RMSE", "val RMSE"}, xs,
                                                              {loss, val}, "step", "RMSE"));
            commit(run, o, out / "manifest.json");
            std::cout << "steps " << result->steps_run << ", best step " << result->best_step << ", val RMSE "
                      << eval::format_number(result->best_val_rmse) << "\n";
            return 0;
        }

        if (c_eval->parsed()) {
            run.command = "eval";
            auto ck = train::load_checkpoint(ev.checkpoint);
            run.inputs.push_back(ev.checkpoint);
            auto data = load_data(ev.data, ev.splits, run);
            const auto& ds = data.dataset;
            const Split split = ev.split == "train" ? Split::train : ev.split == "val" ? Split::val : Split::test;
            const std::size_t len = ck.config.window;
            auto idx = ds.indices(split);
            if (idx.empty()) throw std::runtime_error("no clips in split " + ev.split);
            const auto windows = eval::clip_windows(ds, idx, *ds.norm_stats, len, 0);
            std::vector<eval::MethodScores> scores;
            const auto learned = ck.model.is_transformer() ? eval::Method::transformer : eval::Method::cnn;
            scores.push_back({learned, eval::per_exercise_rmse(windows, eval::predict_windows(ck.model, windows))});
            if (ev.baselines) {
                baselines::RetrievalIndex index(
                    eval::clip_windows(ds, ds.indices(Split::train), *ds.norm_stats, len, train_stride(len)));
                scores.insert(scores.begin(), {eval::Method::nn, eval::per_exercise_rmse(windows, baselines::predict_nn(windows, index))});
                scores.insert(scores.begin(), {eval::Method::random, eval::per_exercise_rmse(windows, baselines::predict_random(windows, index, ev.seed))});
            }
            run.config = {{"split", ev.split}, {"window", len}, {"baselines", ev.baselines}};
            run.seeds = {{"random_baseline", ev.seed}};
            const fs::path out = ev.out.empty() ? fs::path(ev.checkpoint).parent_path() : fs::path(ev.out);
            Outputs o;
            o.add(out / ("eval_" + ev.split + ".csv"), eval::per_exercise_csv(scores));
            o.add(out / ("eval_" + ev.split + ".json"), eval::per_exercise_json(scores));
            commit(run, o, out / ("eval_" + ev.split + ".manifest.json"));
            for (const auto& s : scores)
                std::cout << eval::method_name(s.method) << " mean RMSE " << eval::format_number(s.table.mean) << "\n";
            for (Exercise e : scores.back().table.missing) std::cerr << "warning: no windows for " << exercise_name(e) << "\n";
            return 0;
        }

        if (c_loo->parsed()) {
            run.command = "loo";
            auto data = load_data(loo.data, loo.splits, run);
            require_all_exercises(data.dataset);
            auto o = sweep_options(loo, eval::Protocol::leave_one_out);
            std::vector<Exercise> held;
            for (const auto& n : loo_exercises) {
                auto e = exercise_from_name(n);
                if (!e) throw std::invalid_argument("unknown exercise: " + n);
                held.push_back(*e);
            }
            auto r = eval::leave_one_out(data.dataset, o, held);
            run.config = sweep_config(o);
            run.seeds = {{"run", o.seed}};
            Outputs out;
            out.add(fs::path(loo.out) / "loo.csv", eval::loo_csv(r));
            out.add(fs::path(loo.out) / "loo.json", eval::loo_json(r));
            commit(run, out, fs::path(loo.out) / "manifest.json");
            for (std::size_t m = 0; m < r.methods.size(); ++m)
                std::cout << eval::method_name(r.methods[m]) << " OOD mean RMSE " << eval::format_number(r.mean[m]) << "\n";
            return 0;
        }

        if (c_tmp->parsed()) {
            run.command = "temporal";
            auto data = load_data(tmp.data, tmp.splits, run);
            auto o = sweep_options(tmp, eval::Protocol::temporal);
            auto r = eval::temporal_sweep(data.dataset, o, lengths);
            run.config = sweep_config(o);
            run.config["lengths"] = lengths;
            run.seeds = {{"run", o.seed}};
            std::vector<double> xs;
            for (auto l : lengths) xs.push_back(static_cast<double>(l) / kFps);
            std::vector<std::string> names;
            for (auto m : r.methods) names.emplace_back(eval::method_name(m));
            Outputs out;
            out.add(fs::path(tmp.out) / "temporal.csv", eval::temporal_csv(r));
            out.add(fs::path(tmp.out) / "temporal.json", eval::temporal_json(r));
            out.add(fs::path(tmp.out) / "temporal.svg",
                    eval::line_plot_svg("RMSE by window length", names, xs, r.rmse, "window (s)", "mean RMSE"));
            commit(run, out, fs::path(tmp.out) / "manifest.json");
            std::cout << eval::temporal_csv(r);
            return 0;
        }

        if (c_trf->parsed()) {
            run.command = "transfer";
            auto data = load_data(trf.data, trf.splits, run);
            std::vector<std::string> subjects;
            for (const auto& c : data.dataset.clips)
                if (std::find(subjects.begin(), subjects.end(), c.subject_id) == subjects.end()) subjects.push_back(c.subject_id);
            if (subject_a.empty() && !subjects.empty()) subject_a = subjects[0];
            if (subject_b.empty() && subjects.size() > 1) subject_b = subjects[1];
            if (subject_b.empty() || subject_a == subject_b) throw std::invalid_argument("transfer needs two distinct subjects");
            auto o = sweep_options(trf, eval::Protocol::transfer);
            auto r = eval::transfer_sweep(data.dataset, subject_a, subject_b, ks, o);
            run.config = sweep_config(o);
            run.config["subject_a"] = subject_a;
            run.config["subject_b"] = subject_b;
            run.config["k"] = ks;
            run.seeds = {{"run", o.seed}};
            std::vector<double> xs(r.k.begin(), r.k.end());
            Outputs out;
            out.add(fs::path(trf.out) / "transfer.csv", eval::transfer_csv(r));
            out.add(fs::path(trf.out) / "transfer.json", eval::transfer_json(r));
            out.add(fs::path(trf.out) / "transfer.svg",
                    eval::line_plot_svg("Transfer to " + subject_b, {"fine-tuned from " + subject_a, "from scratch"}, xs,
                                        {r.fine_tuned, r.scratch}, "exercises k", "mean RMSE"));
            commit(run, out, fs::path(trf.out) / "manifest.json");
            std::cout << eval::transfer_csv(r);
            return 0;
        }

        if (c_sim->parsed()) {
            run.command = "simmatrix";
            if (sim.reps.empty()) sim.reps = {"pose", "predicted-emg"};
            std::vector<eval::Representation> reps;
            for (const auto& r : sim.reps) reps.push_back(eval::representation_from_name(r));
            auto data = load_data(sim.data, sim.splits, run);
            const auto& ds = data.dataset;
            bool need_model = false;
            for (auto r : reps) need_model |= r == eval::Representation::predicted_emg || r == eval::Representation::embedding;
            std::optional<Model> model;
            json model_source = nullptr;
            if (need_model) {
                if (!sim.checkpoint.empty()) {
                    auto ck = train::load_checkpoint(sim.checkpoint);
                    run.inputs.push_back(sim.checkpoint);
                    if (!ck.model.is_transformer()) throw std::invalid_argument("--checkpoint must hold a transformer");
                    if (ck.config.window != kDefaultWindow) throw std::invalid_argument("--checkpoint must use 30-frame windows");
                    model = ck.model;
                    model_source = sim.checkpoint;
                } else {
                    eval::SweepOptions o = eval::preset_sweep_options(sim.preset, eval::Protocol::in_distribution);
                    o.seed = sim.seed;
                    o.methods = {eval::Method::transformer};
                    o.max_steps = sim.max_steps;
                    auto id = eval::in_distribution(ds, o);
                    model = id.trained.at(0).model;
                    model_source = {{"trained", sweep_config(o)}};
                }
            }
            const auto queries = eval::clip_windows(ds, ds.indices(Split::test), *ds.norm_stats, kDefaultWindow, 0);
            std::vector<std::size_t> all(ds.clips.size());
            for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
            const auto index = eval::clip_windows(ds, all, *ds.norm_stats, kDefaultWindow, 0);

            Outputs out;
            json summary = {{"schema", "myograph.report"}, {"version", eval::kReportSchemaVersion}, {"kind", "similarity_summary"}};
            std::vector<eval::SimilarityMatrix> mats;
            for (auto rep : reps) {
                const Model* mp = model ? &*model : nullptr;
                auto qf = eval::window_features(queries, rep, mp);
                auto xf = eval::window_features(index, rep, mp);
                auto m = eval::similarity_matrix(queries, qf, index, xf);
                auto order = eval::seriate(m);
                const std::string name(eval::representation_name(rep));
                out.add(fs::path(sim.out) / ("similarity_" + name + ".csv"), eval::similarity_csv(m, order));
                out.add(fs::path(sim.out) / ("similarity_" + name + ".json"), eval::similarity_json(m, order, rep));
                out.add(fs::path(sim.out) / ("similarity_" + name + ".svg"), eval::heatmap_svg(m, order, "Retrieval frequency: " + name));
                summary["band_mass"][name] = eval::band_mass(m, order, 1);
                mats.push_back(std::move(m));
            }
            summary["uniform_band_mass"] = eval::uniform_band_mass(mats.front().size(), 1);
            json rows = json::array();
            std::size_t differing = 0;
            std::ostringstream text;
            text << "query";
            for (auto rep : reps) text << ',' << eval::representation_name(rep);
            text << ",differs\n";
            for (std::size_t r = 0; r < mats.front().size(); ++r) {
                json row = {{"exercise", exercise_name(mats.front().exercises[r])}};
                text << exercise_name(mats.front().exercises[r]);
                bool differs = false;
                for (std::size_t k = 0; k < mats.size(); ++k) {
                    if (mats[k].exercises != mats.front().exercises) throw std::runtime_error("matrices cover different exercises");
                    const auto a = eval::row_argmax(mats[k], r);
                    row["argmax"][std::string(eval::representation_name(reps[k]))] = exercise_name(mats[k].exercises[a]);
                    text << ',' << exercise_name(mats[k].exercises[a]);
                    differs |= a != eval::row_argmax(mats.front(), r);
                }
                row["differs"] = differs;
                differing += differs;
                text << ',' << (differs ? "yes" : "no") << '\n';
                rows.push_back(row);
            }
            summary["rows"] = rows;
            summary["rows_with_different_argmax"] = differing;
            out.add(fs::path(sim.out) / "similarity_summary.json", summary.dump(2) + "\n");
            out.add(fs::path(sim.out) / "similarity_summary.csv", text.str());
            run.config = {{"representations", sim.reps}, {"model", model_source}, {"preset", sim.preset}};
            run.seeds = {{"run", sim.seed}};
            commit(run, out, fs::path(sim.out) / "manifest.json");
            std::cout << differing << " of " << mats.front().size() << " rows change their most retrieved exercise\n";
            return 0;
        }

        if (c_self->parsed()) {
            if (!st.fault_op.empty()) {
                auto op = ad::op_from_name(st.fault_op);
                if (!op) throw std::invalid_argument("unknown op: " + st.fault_op);
                ad::set_adjoint_fault(*op);
            }
            const auto t0 = std::chrono::steady_clock::now();
            auto results = selftest::run_all(st.seed);
            std::size_t failed = 0;
            for (const auto& r : results) {
                failed += !r.passed;
                std::cout << (r.passed ? "PASS " : "FAIL ") << r.group << " " << r.name << ": " << r.value;
                if (!r.detail.empty()) std::cout << " (" << r.detail << ")";
                std::cout << "\n";
            }
            const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            std::cout << results.size() - failed << "/" << results.size() << " checks passed in " << secs << " s\n";
            if (failed) {
                for (const auto& r : results)
                    if (!r.passed) std::cerr << "failed: " << r.group << " " << r.name << "\n";
                return 1;
            }
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
