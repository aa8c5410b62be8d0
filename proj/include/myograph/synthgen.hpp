#pragma once

// Synthetic motion -> muscle generator. A keyframed joint-angle program per
// exercise drives a stick figure; its 2D projection gives the keypoints and a
// rule-based oracle turns the joint trajectory into per-muscle activation.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "myograph/datamodel.hpp"

namespace myograph::synth {

enum Side : std::size_t { kLeft = 0, kRight = 1 };

// Joint angles in radians, lengths in meters. Flexion is positive forward for
// shoulders and hips and positive for bending elbows and knees.
struct Pose {
    std::array<double, 2> shoulder_flex{};
    std::array<double, 2> shoulder_abd{};
    std::array<double, 2> elbow_flex{};
    std::array<double, 2> hip_flex{};
    std::array<double, 2> hip_abd{};
    std::array<double, 2> knee_flex{};
    double trunk_lean = 0;  // forward
    double trunk_side = 0;  // toward the left
    double trunk_twist = 0;
    double body_yaw = 0;
    double root_x = 0;  // lateral shift toward the left
    double root_z = 0;  // forward shift
    double hop = 0;     // lift above the supported height
    std::array<double, 2> support{0.5, 0.5};  // weight share per foot, zero when airborne
};

Pose neutral_pose();

struct Keyframe {
    Pose pose;
    double hold_s = 0;      // time spent at this pose
    double move_s = 0.5;    // transition to the next keyframe (cyclic)
    double jump = 0;        // apex height when the transition leaves the ground
};

// Per-angle direction of a segment: flexing, extending or holding.
enum class Tag : std::uint8_t { concentric, eccentric, hold };

struct ExerciseProgram {
    Exercise exercise = Exercise::JumpingJack;
    std::vector<Keyframe> keyframes;

    double period() const;
    // Pose at program time t (seconds, wraps around the cycle).
    Pose at(double t) const;
    // Direction of each actuated angle during segment i (hold, then move),
    // flattened as [segment][angle] over the 12 limb angles.
    std::vector<std::array<Tag, 12>> segment_tags() const;
};

const ExerciseProgram& program(Exercise e);

struct Point3 {
    double x = 0, y = 0, z = 0;
};

// Body-25 joint positions in meters. y is up, z faces the figure's front.
struct Skeleton {
    std::array<Point3, kJoints> joints{};
    Point3 forearm_com(Side s) const;
    Point3 shank_com(Side s) const;
    Point3 leg_com(Side s) const;
};

// grounded places the supporting feet on y = 0; otherwise the pelvis sits at
// the origin.
Skeleton forward_kinematics(const Pose& pose, bool grounded = true);

struct Camera {
    double yaw = 0.5235987755982988;  // 30 degrees
    double width_m = 3.6;
    double height_m = 2.8;
    double ground_v = 0.94;
};

struct Placement {
    double dx = 0;
    double dy = 0;
    double scale = 1;
};

// 25 x 2 image-normalized coordinates, clamped to [0,1].
std::array<double, kFrameDim> project(const Skeleton& skeleton, const Camera& camera, const Placement& placement);

struct OracleConfig {
    int version = 1;
    double w_gravity = 6;
    double w_concentric = 10;
    double hold_onset = 8;        // A
    double hold_fatigue = 5;      // B
    double hold_decay_s = 0.5;    // tau1
    double hold_fatigue_s = 3;    // tau2
    double hold_threshold = 0.2;  // rad/s
    double gate_tolerance = 0.15;
    double noise_sigma = 2;
    double pre_roll_s = 10;

    bool operator==(const OracleConfig&) const = default;
};

// key = value lines; '#' starts a comment. Unknown keys are errors.
OracleConfig parse_oracle_config(const std::string& text);
std::string format_oracle_config(const OracleConfig& config);
OracleConfig load_oracle_config(const std::filesystem::path& path);

struct SubjectParams {
    std::string subject_id = "S1";
    std::array<double, kMuscles> gains{1, 1, 1, 1, 1, 1, 1, 1};
    double speed = 1;
    std::array<double, kMuscles> offsets{};

    static SubjectParams sample(std::string id, std::uint64_t seed);
};

// Per-frame oracle internals, T x 8 each.
struct OracleTerms {
    std::vector<double> gravity;
    std::vector<double> concentric;
    std::vector<double> hold;
    std::vector<double> activation;  // gamma * max(0, w_g G + w_c C + H), before noise
};

// Evaluates the oracle on a pose trajectory sampled at 10 fps. Frames before
// first_output are context only (hold onsets, velocities) and are dropped.
OracleTerms muscle_oracle(const std::vector<Pose>& trajectory, const SubjectParams& subject,
                          const OracleConfig& config = {}, std::size_t first_output = 0);

struct ClipVariation {
    double phase_s = 0;
    double tempo = 1;
    double amplitude = 1;
    Placement placement{};
};

ClipVariation sample_variation(std::uint64_t clip_seed);

// Joint trajectory of a clip, including the oracle pre-roll frames.
std::vector<Pose> clip_trajectory(Exercise e, const SubjectParams& subject, const ClipVariation& variation,
                                  std::size_t frames, std::size_t pre_roll_frames);

struct ClipOutput {
    Clip clip;
    OracleTerms terms;  // noise-free internals for the visible frames
};

inline constexpr double kMinDuration = 3.0;

// duration_s >= 3; T = round(10 * duration_s).
ClipOutput generate_clip_detailed(Exercise e, const SubjectParams& subject, double duration_s, std::uint64_t seed,
                                  const OracleConfig& config = {});
Clip generate_clip(Exercise e, const SubjectParams& subject, double duration_s, std::uint64_t seed,
                   const OracleConfig& config = {});

struct CorpusSpec {
    std::vector<SubjectParams> subjects;
    std::vector<std::size_t> clips_per_subject;  // per exercise; one entry per subject
    std::vector<Exercise> exercises;             // empty means all 20
    double duration_s = 30;
    std::uint64_t seed = 0;
    OracleConfig oracle{};
};

// Subjects S1..Sn sampled from the seed, equal clip counts.
CorpusSpec default_corpus_spec(std::size_t subjects, std::size_t clips_per_pair, double duration_s,
                               std::uint64_t seed);

// Clips ordered by subject, exercise, repetition, with default splits and
// normalization statistics fitted on the training split.
Dataset generate_corpus(const CorpusSpec& spec);

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace myograph::synth
