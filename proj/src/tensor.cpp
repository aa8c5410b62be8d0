#include "myograph/tensor.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <functional>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace myograph::ad {

namespace {

struct OpNameEntry {
    OpKind kind;
    std::string_view name;
};

constexpr std::array<OpNameEntry, 18> kOpNames{{
    {OpKind::leaf, "leaf"},
    {OpKind::matmul, "matmul"},
    {OpKind::transpose, "transpose"},
    {OpKind::reshape, "reshape"},
    {OpKind::add, "add"},
    {OpKind::mul_scalar, "mul_scalar"},
    {OpKind::scale_shift, "scale_shift"},
    {OpKind::relu, "relu"},
    {OpKind::layer_norm, "layer_norm"},
    {OpKind::softmax_lastdim, "softmax_lastdim"},
    {OpKind::linear, "linear"},
    {OpKind::concat, "concat"},
    {OpKind::slice_lastdim, "slice_lastdim"},
    {OpKind::mse, "mse"},
    {OpKind::conv1d_temporal, "conv1d_temporal"},
    {OpKind::conv2d, "conv2d"},
    {OpKind::batch_norm, "batch_norm"},
    {OpKind::attention, "attention"},
}};

constexpr std::array<OpKind, 17> kDifferentiable{
    OpKind::matmul,          OpKind::transpose,     OpKind::reshape,  OpKind::add,
    OpKind::mul_scalar,      OpKind::scale_shift,   OpKind::relu,     OpKind::layer_norm,
    OpKind::softmax_lastdim, OpKind::linear,        OpKind::concat,   OpKind::slice_lastdim,
    OpKind::mse,             OpKind::conv1d_temporal, OpKind::conv2d, OpKind::batch_norm,
    OpKind::attention,
};

std::atomic<int> g_fault{-1};

}  // namespace

std::size_t numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::string_view op_name(OpKind kind) {
    for (const auto& e : kOpNames)
        if (e.kind == kind) return e.name;
    return "unknown";
}

std::optional<OpKind> op_from_name(std::string_view name) {
    for (const auto& e : kOpNames)
        if (e.name == name) return e.kind;
    return std::nullopt;
}

std::span<const OpKind> differentiable_ops() { return kDifferentiable; }

Buffer& Node::grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
}

double Tensor::item() const {
    if (numel() != 1) throw std::invalid_argument("item() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
}

static Tensor make_leaf(Shape shape, std::vector<double> values, bool requires_grad) {
    if (shape.empty()) shape = {1};
    for (auto extent : shape)
        if (extent == 0) throw std::invalid_argument("tensor extents must be positive, got " + shape_str(shape));
    if (numel(shape) != values.size())
        throw std::invalid_argument("tensor of shape " + shape_str(shape) + " given " +
                                    std::to_string(values.size()) + " values");
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value.assign(values.begin(), values.end());
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tape::constant(Shape shape, std::vector<double> values) {
    return make_leaf(std::move(shape), std::move(values), false);
}

Tensor Tape::parameter(Shape shape, std::vector<double> values) {
    auto t = make_leaf(std::move(shape), std::move(values), record_);
    if (record_) params_.push_back(t);
    return t;
}

Tensor Tape::make_output(OpKind kind, Shape shape, std::span<const Tensor> inputs) {
    auto node = std::make_shared<Node>();
    node->value.assign(numel(shape), 0.0);
    node->shape = std::move(shape);
    node->kind = kind;
    node->requires_grad =
        record_ && std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
    return Tensor(std::move(node));
}

void Tape::record(OpKind kind, std::vector<Tensor> inputs, Tensor output, std::function<void()> adjoint) {
    if (!record_ || !output.requires_grad()) return;
    entries_.push_back(Entry{kind, std::move(inputs), std::move(output), std::move(adjoint)});
}

void Tape::backward(const Tensor& loss) {
    if (loss.numel() != 1) throw std::invalid_argument("backward needs a scalar loss, got shape " + shape_str(loss.shape()));
    for (auto& p : params_) p.node().grad_buffer();
    if (!loss.requires_grad()) return;
    loss.node().grad_buffer()[0] += 1.0;

    const int fault = g_fault.load(std::memory_order_relaxed);
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
        Node& out = it->output.node();
        if (out.grad.empty()) continue;  // not on a path to the loss
        if (fault == static_cast<int>(it->kind))
            for (auto& g : out.grad) g *= 1.5;
        it->adjoint();
    }
}

void set_adjoint_fault(std::optional<OpKind> kind) {
    g_fault.store(kind ? static_cast<int>(*kind) : -1, std::memory_order_relaxed);
}

std::optional<OpKind> adjoint_fault() {
    const int v = g_fault.load(std::memory_order_relaxed);
    if (v < 0) return std::nullopt;
    return static_cast<OpKind>(v);
}

}  // namespace myograph::ad
