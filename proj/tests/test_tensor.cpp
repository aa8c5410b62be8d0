#include <doctest.h>

#include <cmath>
#include <random>
#include <stdexcept>

#include "myograph/grad_check.hpp"
#include "myograph/ops.hpp"
#include "myograph/selftest.hpp"
#include "myograph/tensor.hpp"

using namespace myograph;
using namespace myograph::ad;

namespace {

std::vector<double> random_values(std::size_t n, std::uint64_t seed, double lo = -1, double hi = 1) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> v(n);
    for (auto& x : v) x = dist(rng);
    return v;
}

}  // namespace

TEST_CASE("softmax of a symmetric row is uniform") {
    Tape tape;
    auto x = tape.constant({1, 2}, {0, 0});
    auto y = softmax_lastdim(tape, x);
    CHECK(y.data()[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(y.data()[1] == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("relu clips negatives") {
    Tape tape;
    auto y = relu(tape, tape.constant({3}, {-1, 0, 2}));
    CHECK(std::vector<double>(y.data().begin(), y.data().end()) == std::vector<double>{0, 0, 2});
}

TEST_CASE("mse of identical tensors is zero") {
    Tape tape;
    auto a = tape.constant({2}, {1, 1});
    auto b = tape.constant({2}, {1, 1});
    CHECK(mse(tape, a, b).item() == 0.0);
}

TEST_CASE("hand derivative of mse(w*x, y)") {
    Tape tape;
    auto w = tape.parameter({1, 1}, {2});
    auto x = tape.constant({1, 1}, {3});
    auto y = tape.constant({1, 1}, {5});
    auto loss = mse(tape, matmul(tape, w, x), y);
    tape.backward(loss);
    // mse of one element: (6-5)^2, d/dw = 2*(6-5)*3
    CHECK(w.grad()[0] == doctest::Approx(6.0));
}

TEST_CASE("unreachable leaf gets an all-zero gradient") {
    Tape tape;
    auto used = tape.parameter({2}, {1, 2});
    auto unused = tape.parameter({3}, {4, 5, 6});
    auto loss = mse(tape, used, tape.constant({2}, {0, 0}));
    tape.backward(loss);
    REQUIRE(unused.grad().size() == 3);
    for (double g : unused.grad()) CHECK(g == 0.0);
}

TEST_CASE("backward rejects a non-scalar loss") {
    Tape tape;
    auto p = tape.parameter({2}, {1, 2});
    auto y = relu(tape, p);
    CHECK_THROWS_AS(tape.backward(y), std::invalid_argument);
}

TEST_CASE("shape mismatch errors name both shapes") {
    Tape tape;
    auto a = tape.constant({2, 3}, std::vector<double>(6, 1));
    auto b = tape.constant({2, 3}, std::vector<double>(6, 1));
    try {
        matmul(tape, a, b);
        FAIL("matmul accepted [2,3]x[2,3]");
    } catch (const std::invalid_argument& e) {
        std::string msg = e.what();
        CHECK(msg.find("[2x3]") != std::string::npos);
    }
    CHECK_THROWS_AS(add(tape, a, tape.constant({3, 2}, std::vector<double>(6, 1))), std::invalid_argument);
    auto x = tape.constant({2, 5}, std::vector<double>(10, 1));
    auto even_kernel = tape.constant({2, 2, 2}, std::vector<double>(8, 1));
    CHECK_THROWS_AS(conv1d_temporal(tape, x, even_kernel, tape.constant({2}, {0, 0})), std::invalid_argument);
}

TEST_CASE("layer norm rows have zero mean and unit variance before the affine part") {
    Tape tape;
    const std::size_t rows = 5, cols = 16;
    auto x = tape.constant({rows, cols}, random_values(rows * cols, 3, -4, 9));
    auto gain = tape.constant({cols}, std::vector<double>(cols, 1));
    auto bias = tape.constant({cols}, std::vector<double>(cols, 0));
    auto y = layer_norm(tape, x, gain, bias, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
        double mean = 0, var = 0;
        for (std::size_t c = 0; c < cols; ++c) mean += y.data()[r * cols + c];
        mean /= cols;
        for (std::size_t c = 0; c < cols; ++c) var += std::pow(y.data()[r * cols + c] - mean, 2);
        var /= cols;
        CHECK(std::abs(mean) < 1e-9);
        CHECK(std::abs(var - 1) < 1e-6);
    }
}

TEST_CASE("softmax rows sum to one and stay positive") {
    Tape tape;
    const std::size_t rows = 7, cols = 11;
    auto y = softmax_lastdim(tape, tape.constant({rows, cols}, random_values(rows * cols, 5, -30, 30)));
    for (std::size_t r = 0; r < rows; ++r) {
        double s = 0;
        for (std::size_t c = 0; c < cols; ++c) {
            double v = y.data()[r * cols + c];
            CHECK(v > 0);
            s += v;
        }
        CHECK(std::abs(s - 1) < 1e-12);
    }
}

TEST_CASE("identity kernel conv reproduces its input") {
    Tape tape;
    const std::size_t c = 4, t = 9;
    auto input = random_values(c * t, 8);
    std::vector<double> kernel(c * c, 0);
    for (std::size_t i = 0; i < c; ++i) kernel[i * c + i] = 1;
    auto y = conv1d_temporal(tape, tape.constant({c, t}, input), tape.constant({c, c, 1}, kernel),
                             tape.constant({c}, std::vector<double>(c, 0)));
    CHECK(std::vector<double>(y.data().begin(), y.data().end()) == input);
}

TEST_CASE("conv output keeps the temporal length") {
    Tape tape;
    auto y = conv1d_temporal(tape, tape.constant({3, 6}, random_values(18, 1)),
                             tape.constant({5, 3, 9}, random_values(135, 2)), tape.constant({5}, random_values(5, 3)));
    CHECK(y.shape() == Shape{5, 6});
}

TEST_CASE("every differentiable op passes the gradient check on 20 seeds") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto cases = selftest::op_cases(seed);
        CHECK(cases.size() == differentiable_ops().size());
        for (const auto& c : cases) {
            auto r = grad_check(c, {.eps = 1e-5, .seed = seed});
            INFO(c.name << " seed " << seed << " worst " << r.worst_param << "[" << r.worst_index << "]");
            CHECK(r.max_rel_error < 1e-5);
            CHECK(r.entries_checked > 0);
        }
    }
}

TEST_CASE("single linear layer matches finite differences to 1e-7") {
    GradCheckCase c;
    c.name = "linear";
    c.param_names = {"x", "w", "b"};
    c.shapes = {{3, 4}, {2, 4}, {2}};
    c.values = {random_values(12, 1), random_values(8, 2), random_values(2, 3)};
    auto target = random_values(6, 4);
    c.build = [target](Tape& tape, const std::vector<Tensor>& p) {
        return mse(tape, linear(tape, p[0], p[1], p[2]), tape.constant({3, 2}, target));
    };
    CHECK(grad_check(c).max_rel_error < 1e-7);
}

TEST_CASE("padded conv matches finite differences to 1e-6") {
    GradCheckCase c;
    c.name = "conv";
    c.param_names = {"x", "k", "b"};
    c.shapes = {{2, 3, 7}, {4, 3, 5}, {4}};
    c.values = {random_values(42, 11), random_values(60, 12), random_values(4, 13)};
    auto target = random_values(56, 14);
    c.build = [target](Tape& tape, const std::vector<Tensor>& p) {
        return mse(tape, conv1d_temporal(tape, p[0], p[1], p[2]), tape.constant({2, 4, 7}, target));
    };
    CHECK(grad_check(c).max_rel_error < 1e-6);
}

TEST_CASE("full models pass the gradient check") {
    for (const auto& c : selftest::model_cases(0)) {
        auto r = grad_check(c, {.eps = 1e-5, .entries_per_param = 2, .seed = 0});
        INFO(c.name << " worst " << r.worst_param);
        CHECK(r.max_rel_error < 1e-5);
    }
}

TEST_CASE("backward is bit-reproducible") {
    auto cases = selftest::op_cases(4);
    for (const auto& c : cases) {
        std::vector<std::vector<double>> first;
        for (int run = 0; run < 2; ++run) {
            Tape tape;
            std::vector<Tensor> leaves;
            for (std::size_t i = 0; i < c.shapes.size(); ++i) leaves.push_back(tape.parameter(c.shapes[i], c.values[i]));
            tape.backward(c.build(tape, leaves));
            for (std::size_t i = 0; i < leaves.size(); ++i) {
                std::vector<double> g(leaves[i].grad().begin(), leaves[i].grad().end());
                if (run == 0)
                    first.push_back(g);
                else
                    CHECK(g == first[i]);
            }
        }
    }
}

TEST_CASE("a corrupted adjoint is caught by the gradient check") {
    set_adjoint_fault(OpKind::softmax_lastdim);
    bool caught = false;
    for (const auto& c : selftest::op_cases(0))
        if (c.name == "softmax_lastdim") caught = grad_check(c).max_rel_error > 1e-3;
    set_adjoint_fault(std::nullopt);
    CHECK(caught);
}

TEST_CASE("op names round-trip") {
    for (OpKind k : differentiable_ops()) CHECK(op_from_name(op_name(k)) == k);
    CHECK_FALSE(op_from_name("nonsense").has_value());
}
