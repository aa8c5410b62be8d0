#pragma once

// Built-in verification suites shared by the CLI selftest, the unit tests and
// the acceptance run: gradient checks, oracle contracts and round-trips.

#include <cstdint>
#include <string>
#include <vector>

#include "myograph/datamodel.hpp"
#include "myograph/grad_check.hpp"

namespace myograph::selftest {

struct CheckResult {
    std::string group;  // "gradient", "oracle", "roundtrip"
    std::string name;   // op or contract name
    bool passed = false;
    double value = 0;
    double threshold = 0;
    std::string detail;
};

// One small graph per differentiable op, named after the op. The loss is an
// MSE against a fixed random target so every gradient entry is O(1).
std::vector<ad::GradCheckCase> op_cases(std::uint64_t seed);
// Full default transformer and CNN on a short random batch.
std::vector<ad::GradCheckCase> model_cases(std::uint64_t seed);

inline constexpr double kGradTolerance = 1e-5;
inline constexpr double kGradEps = 1e-5;

// entries_per_param bounds the model checks; op cases check every entry.
std::vector<CheckResult> gradient_checks(std::uint64_t seed, std::size_t model_entries_per_param = 2);

struct ActivationMeans {
    std::vector<double> per_muscle;  // noise-free whole-clip mean activation, 8 values
};
// Mean over `seeds` clips of the default subject.
ActivationMeans exercise_means(Exercise exercise, std::size_t seeds = 4, double duration_s = 30);

inline constexpr double kContractRatio = 3.0;
inline constexpr double kActiveLevel = 2.0;    // "activates": mean activation at least this
inline constexpr double kInactiveLevel = 1.0;  // "does not activate": mean activation below this

// Muscle-selectivity ratios, the woodchop/elbow-punch contract and the hold
// shape (onset peak, dip at 2 s, rise by 6 s).
std::vector<CheckResult> oracle_contracts();

struct HoldProfile {
    std::vector<double> activation;  // from the hold onset, one value per frame
    std::size_t onset = 0;           // frame of the onset within the full trajectory
};
// Right bicep during a 9 s hold of a flexed, raised arm after a 1 s raise.
HoldProfile hold_profile();

// Dataset JSONL, checkpoint bytes and oracle config text survive a round trip.
std::vector<CheckResult> round_trips();

std::vector<CheckResult> run_all(std::uint64_t seed = 0);

}  // namespace myograph::selftest
