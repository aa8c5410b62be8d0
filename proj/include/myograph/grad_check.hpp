#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "myograph/tensor.hpp"

namespace myograph::ad {

// A graph under test: parameter leaves with initial values plus a function
// that rebuilds the scalar loss from those leaves on a fresh tape.
struct GradCheckCase {
    std::string name;
    std::vector<std::string> param_names;
    std::vector<Shape> shapes;
    std::vector<std::vector<double>> values;
    std::function<Tensor(Tape&, const std::vector<Tensor>&)> build;
};

struct GradCheckOptions {
    double eps = 1e-5;
    // 0 checks every entry; otherwise a seeded sample of this many per parameter.
    std::size_t entries_per_param = 0;
    std::uint64_t seed = 0;
    // Smallest denominator of the relative error. Entries whose exact gradient
    // is zero (a bias ahead of a normalization) otherwise measure
    // finite-difference noise.
    double floor = 1e-4;
};

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::string worst_param;
    std::size_t worst_index = 0;
    std::size_t entries_checked = 0;
};

// max over checked entries of |analytic - numeric| / max(|analytic|, |numeric|, floor),
// numeric from central differences.
GradCheckResult grad_check(const GradCheckCase& test_case, const GradCheckOptions& options = {});

}  // namespace myograph::ad
