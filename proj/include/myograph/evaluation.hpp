#pragma once

// Metrics, evaluation sweeps, similarity analysis and report writers.

#include <array>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "myograph/baselines.hpp"
#include "myograph/datamodel.hpp"
#include "myograph/models.hpp"
#include "myograph/training.hpp"

namespace myograph::eval {

// Root mean squared error over every element.
double rmse(std::span<const double> pred, std::span<const double> target);

// Anything that maps windows to [N*T, 8] predictions.
using Predictor = std::function<std::vector<double>(std::span<const Window>)>;

struct ExerciseScore {
    Exercise exercise;
    double rmse = 0;
    std::size_t windows = 0;
};

// One RMSE per exercise present (canonical order) pooled over its windows,
// plus the unweighted mean over those rows. Exercises without windows are
// left out and listed in `missing`.
struct PerExerciseTable {
    std::vector<ExerciseScore> rows;
    double mean = 0;
    std::vector<Exercise> missing;
    std::optional<double> find(Exercise e) const;
};

PerExerciseTable per_exercise_rmse(std::span<const Window> windows, std::span<const double> pred);
PerExerciseTable per_exercise_rmse(std::span<const Window> windows, const Predictor& predictor);

// Batched model inference over windows of one length.
std::vector<double> predict_windows(const Model& model, std::span<const Window> windows);
// Encoder outputs [N*T, d_model] of a transformer.
std::vector<double> embed_windows(const Model& model, std::span<const Window> windows);

// Windows of the given clips; stride 0 means non-overlapping.
std::vector<Window> clip_windows(const Dataset& dataset, std::span<const std::size_t> clips, const NormStats& stats,
                                 std::size_t length, std::size_t stride);

enum class Method { transformer, cnn, nn, random };
std::string_view method_name(Method m);
Method method_from_name(std::string_view name);
inline constexpr std::array<Method, 4> kAllMethods{Method::random, Method::nn, Method::cnn, Method::transformer};

struct SweepOptions {
    std::string preset = "desk";
    std::uint64_t seed = 0;
    std::size_t jobs = 1;
    std::vector<Method> methods{kAllMethods.begin(), kAllMethods.end()};
    // Overrides applied on top of the preset training configuration.
    std::optional<std::size_t> max_steps;
    std::optional<std::size_t> eval_every;
    std::optional<std::size_t> patience;
};

enum class Protocol { in_distribution, leave_one_out, temporal, transfer };

// Options for a protocol under a preset. Desk sweeps that retrain many
// models use reduced step budgets; the "paper" preset keeps its own.
SweepOptions preset_sweep_options(std::string_view preset, Protocol protocol);
inline constexpr std::size_t kDeskLooSteps = 200;
inline constexpr std::size_t kDeskTemporalSteps = 400;
inline constexpr std::size_t kDeskTransferSteps = 400;

train::TrainConfig sweep_train_config(const SweepOptions& options, train::ModelKind kind, std::size_t window);

struct MethodScores {
    Method method;
    PerExerciseTable table;
};

// Scores every requested method on the test split; learned models train on
// the train split and select on val.
struct IdResult {
    std::vector<MethodScores> methods;
    std::vector<train::TrainResult> trained;  // in the order of the learned methods requested
};
IdResult in_distribution(const Dataset& dataset, const SweepOptions& options, std::size_t window = kDefaultWindow);

// Leave-one-exercise-out: per held-out exercise, train on the train-split
// clips of the other 19 (their val clips drive selection), normalize with
// statistics of those training clips and test on every clip of the held-out
// exercise. Random retrieval has no same-exercise window there and draws
// from the whole index.
struct LooResult {
    std::vector<Method> methods;
    std::vector<Exercise> exercises;
    std::vector<std::vector<double>> rmse;  // [exercise][method]
    std::vector<double> mean;               // per method
};
LooResult leave_one_out(const Dataset& dataset, const SweepOptions& options,
                        std::span<const Exercise> held_out = {});

// Mean RMSE per window length; models are retrained and indexes rebuilt per
// length.
struct TemporalResult {
    std::vector<Method> methods;
    std::vector<std::size_t> lengths;
    std::vector<std::vector<double>> rmse;  // [method][length]
};
inline const std::vector<Method> kTemporalMethods{Method::nn, Method::cnn, Method::transformer};
TemporalResult temporal_sweep(const Dataset& dataset, const SweepOptions& options,
                              std::span<const std::size_t> lengths = kWindowLengths);

// Transfer: a transformer pretrained on subject A, then fine-tuned, or
// trained from scratch, on subject B's clips of the first k exercises.
// Every point is scored on all of subject B's test clips.
struct TransferResult {
    std::vector<std::size_t> k;
    std::vector<double> fine_tuned;
    std::vector<double> scratch;  // k = 0 has no data; reported as NaN
    double pretrained_only = 0;
};
inline constexpr std::array<std::size_t, 5> kTransferGrid{4, 8, 12, 16, 20};
TransferResult transfer_sweep(const Dataset& dataset, const std::string& subject_a, const std::string& subject_b,
                              std::span<const std::size_t> ks, const SweepOptions& options);

// Row = query exercise, column = exercise of the retrieved window.
struct SimilarityMatrix {
    std::vector<Exercise> exercises;
    std::vector<double> values;  // [n, n]
    std::size_t size() const { return exercises.size(); }
    double at(std::size_t i, std::size_t j) const { return values[i * exercises.size() + j]; }
};

enum class Representation { pose, predicted_emg, embedding, ground_truth_emg };
std::string_view representation_name(Representation r);
Representation representation_from_name(std::string_view name);

// Per-window feature vectors in the chosen representation. The model is
// needed for predicted_emg and embedding.
std::vector<std::vector<double>> window_features(std::span<const Window> windows, Representation rep,
                                                 const Model* model);

// Each query retrieves the index window at least squared distance in feature
// space, skipping windows of its own clip; ties go to the smallest
// (clip_id, start). Rows cover the exercises present among the queries.
SimilarityMatrix similarity_matrix(std::span<const Window> queries, std::span<const std::vector<double>> query_features,
                                   std::span<const Window> index, std::span<const std::vector<double>> index_features);

// Greedy chain: from every start, append the exercise adding the most band
// mass; the best chain wins, ties by canonical order.
std::vector<std::size_t> seriate(const SimilarityMatrix& m);
// Share of the total mass within `band` of the diagonal after reordering.
double band_mass(const SimilarityMatrix& m, std::span<const std::size_t> order, std::size_t band = 1);
double uniform_band_mass(std::size_t n, std::size_t band = 1);
std::size_t row_argmax(const SimilarityMatrix& m, std::size_t row);

// Report writers. Each returns the text for byte-level checks.
std::string per_exercise_csv(std::span<const MethodScores> scores);
std::string loo_csv(const LooResult& r);
std::string temporal_csv(const TemporalResult& r);
std::string transfer_csv(const TransferResult& r);
std::string similarity_csv(const SimilarityMatrix& m, std::span<const std::size_t> order);
std::string train_history_csv(const train::TrainResult& r);

inline constexpr int kReportSchemaVersion = 1;
std::string per_exercise_json(std::span<const MethodScores> scores);
std::string loo_json(const LooResult& r);
std::string temporal_json(const TemporalResult& r);
std::string transfer_json(const TransferResult& r);
std::string similarity_json(const SimilarityMatrix& m, std::span<const std::size_t> order, Representation rep);

std::string heatmap_svg(const SimilarityMatrix& m, std::span<const std::size_t> order, const std::string& title);
std::string line_plot_svg(const std::string& title, const std::vector<std::string>& series_names,
                          const std::vector<double>& xs, const std::vector<std::vector<double>>& ys,
                          const std::string& x_label, const std::string& y_label);

// Fixed six-decimal form used in every report; NaN prints as an empty cell.
std::string format_number(double v);

// Writes through a temporary file and renames, so readers never see a
// partial report.
void write_text(const std::filesystem::path& path, const std::string& text);

// Runs fn(i) for i in [0, n) on up to `jobs` threads. Results must be written
// to per-index slots; the first exception is rethrown.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn);

}  // namespace myograph::eval
