#pragma once

// Domain types for synchronized keypoint + sEMG recordings, normalization,
// windowing and dataset splits, plus the MIA-JSONL v1 clip format.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace myograph {

inline constexpr std::size_t kMuscles = 8;
inline constexpr std::size_t kExercises = 20;
inline constexpr std::size_t kJoints = 25;  // OpenPose Body-25
inline constexpr std::size_t kCoords = 2;
inline constexpr std::size_t kFrameDim = kJoints * kCoords;
inline constexpr int kFps = 10;
inline constexpr std::size_t kDefaultWindow = 30;
inline constexpr std::size_t kTrainStride = 5;

enum class Muscle : std::uint8_t {
    LeftBicep,
    RightBicep,
    LeftTricep,
    RightTricep,
    LeftQuad,
    RightQuad,
    LeftHamstring,
    RightHamstring,
};

enum class Exercise : std::uint8_t {
    JumpingJack,
    HighKick,
    LegBack,
    FrontKick,
    FrontPunch,
    HookPunch,
    Pirouette,
    Skater,
    Twist,
    Squats,
    FeetCross,
    ElbowPunch,
    SideShuffle,
    Batting,
    SideLunge,
    Running,
    BallThrow,
    Bowling,
    KneeKick,
    Woodchop,
};

std::string_view muscle_name(Muscle m);
std::optional<Muscle> muscle_from_name(std::string_view name);
std::string_view exercise_name(Exercise e);
std::optional<Exercise> exercise_from_name(std::string_view name);
const std::array<Muscle, kMuscles>& all_muscles();
const std::array<Exercise, kExercises>& all_exercises();
inline std::size_t index_of(Muscle m) { return static_cast<std::size_t>(m); }
inline std::size_t index_of(Exercise e) { return static_cast<std::size_t>(e); }

// T x 25 x 2 image-normalized coordinates, row-major.
struct KeypointSequence {
    std::size_t frames = 0;
    std::vector<double> coords;

    double at(std::size_t t, std::size_t joint, std::size_t axis) const {
        return coords[(t * kJoints + joint) * kCoords + axis];
    }
    bool operator==(const KeypointSequence&) const = default;
};

// T x 8 activations on the 0-100 scale.
struct EmgSequence {
    std::size_t frames = 0;
    std::vector<double> values;

    double at(std::size_t t, Muscle m) const { return values[t * kMuscles + index_of(m)]; }
    bool operator==(const EmgSequence&) const = default;
};

struct Clip {
    std::string clip_id;
    std::string subject_id;
    Exercise exercise = Exercise::JumpingJack;
    int fps = kFps;
    KeypointSequence keypoints;
    std::vector<double> emg_raw;  // T x 8, non-negative

    std::size_t frames() const { return keypoints.frames; }
    double raw(std::size_t t, Muscle m) const { return emg_raw[t * kMuscles + index_of(m)]; }
    bool operator==(const Clip&) const = default;
};

struct NormStats {
    std::array<double, kMuscles> min{};
    std::array<double, kMuscles> max{};
    bool operator==(const NormStats&) const = default;
};

struct Window {
    std::string clip_id;
    std::string subject_id;
    Exercise exercise = Exercise::JumpingJack;
    std::size_t start = 0;
    std::size_t length = 0;
    std::vector<double> keypoints;  // length x 50
    std::vector<double> emg;        // length x 8, normalized
};

enum class Split : std::uint8_t { train, val, test };
std::string_view split_name(Split s);

struct Dataset {
    std::vector<Clip> clips;
    std::optional<NormStats> norm_stats;
    std::map<std::string, Split> splits;  // clip_id -> split

    const Clip& clip(const std::string& id) const;
    // Indices of clips assigned to the split, in dataset order.
    std::vector<std::size_t> indices(Split split) const;
    bool operator==(const Dataset&) const = default;
};

// Per-muscle min/max over every frame of the given clips.
NormStats fit_normalizer(std::span<const Clip* const> clips);
NormStats fit_normalizer(std::span<const Clip> clips);

// 100 * (raw - min) / (max - min), clamped to [0, 100].
EmgSequence normalize_emg(std::span<const double> raw, std::size_t frames, const NormStats& stats);

// Windows starting at 0, stride, 2*stride, ...; empty when length > T.
std::vector<Window> window_clip(const Clip& clip, const NormStats& stats, std::size_t length, std::size_t stride);

bool valid_window_length(std::size_t length);
inline constexpr std::array<std::size_t, 7> kWindowLengths{1, 5, 10, 15, 20, 25, 30};

// Training stride for a window length: the default 5-frame hop, never
// larger than the window itself.
inline std::size_t train_stride(std::size_t length) { return length < kTrainStride ? length : kTrainStride; }

struct ClipPartition {
    std::vector<std::size_t> train;  // every clip of the other exercises
    std::vector<std::size_t> test;   // every clip of the held-out exercise
};
ClipPartition split_leave_one_exercise_out(const Dataset& dataset, Exercise held_out);

// Per (subject, exercise) group ordered by clip id: the last clip is test, the
// second-to-last is val when the group has at least three clips, the rest train.
void assign_default_splits(Dataset& dataset);

// Pixel coordinates to [0,1] by image width/height.
void normalize_keypoint_pixels(std::span<double> coords, double width, double height);

// MIA-JSONL v1 I/O. Errors carry the 1-based line number.
Dataset load_dataset(const std::filesystem::path& path);
void save_dataset(const Dataset& dataset, const std::filesystem::path& path);
std::map<std::string, Split> load_splits(const std::filesystem::path& path);
void save_splits(const Dataset& dataset, const std::filesystem::path& path);

// Serialized forms used by the file writers (exposed for byte-level tests).
std::string dataset_to_jsonl(const Dataset& dataset);
Dataset dataset_from_jsonl(std::string_view text);

}  // namespace myograph
