#include "myograph/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace myograph::ad {

namespace {

std::vector<Tensor> bind(Tape& tape, const GradCheckCase& c, const std::vector<std::vector<double>>& values) {
    std::vector<Tensor> leaves;
    leaves.reserve(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) leaves.push_back(tape.parameter(c.shapes[i], values[i]));
    return leaves;
}

double evaluate(const GradCheckCase& c, const std::vector<std::vector<double>>& values) {
    Tape tape(false);
    return c.build(tape, bind(tape, c, values)).item();
}

}  // namespace

GradCheckResult grad_check(const GradCheckCase& c, const GradCheckOptions& options) {
    if (c.shapes.size() != c.values.size()) throw std::invalid_argument("grad_check: shapes/values length mismatch");

    std::vector<std::vector<double>> analytic;
    {
        Tape tape;
        auto leaves = bind(tape, c, c.values);
        Tensor loss = c.build(tape, leaves);
        tape.backward(loss);
        for (const auto& leaf : leaves) analytic.emplace_back(leaf.grad().begin(), leaf.grad().end());
    }

    std::mt19937_64 rng(options.seed);
    GradCheckResult result;
    auto values = c.values;
    for (std::size_t p = 0; p < values.size(); ++p) {
        std::vector<std::size_t> idx(values[p].size());
        std::iota(idx.begin(), idx.end(), 0);
        if (options.entries_per_param && options.entries_per_param < idx.size()) {
            std::shuffle(idx.begin(), idx.end(), rng);
            idx.resize(options.entries_per_param);
            std::sort(idx.begin(), idx.end());
        }
        for (auto i : idx) {
            const double orig = values[p][i];
            values[p][i] = orig + options.eps;
            const double up = evaluate(c, values);
            values[p][i] = orig - options.eps;
            const double down = evaluate(c, values);
            values[p][i] = orig;
            const double numeric = (up - down) / (2.0 * options.eps);
            const double err = std::abs(analytic[p][i] - numeric) / std::max({options.floor, std::abs(numeric), std::abs(analytic[p][i])});
            ++result.entries_checked;
            if (err > result.max_rel_error || std::isnan(err)) {
                result.max_rel_error = std::isnan(err) ? INFINITY : err;
                result.worst_param = p < c.param_names.size() ? c.param_names[p] : "param" + std::to_string(p);
                result.worst_index = i;
            }
        }
    }
    return result;
}

}  // namespace myograph::ad
