#pragma once

// Dense 64-bit tensors and a reverse-mode tape.
//
// A Tape owns the recorded operations of one graph. Op outputs are written
// once by their producing op and never mutated afterwards (gradients live in
// a separate buffer). A tape must stay on one thread; independent tapes can
// run concurrently.

#include <cstddef>
#include <functional>
#include <memory>
#include <new>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace myograph::ad {

using Shape = std::vector<std::size_t>;

// Buffers start on a 64-byte boundary so vectorized kernels split every
// reduction the same way from run to run; plain heap blocks are only 16-byte
// aligned and the split would follow wherever malloc placed them.
template <class T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t kAlign{64};
    AlignedAllocator() = default;
    template <class U>
    AlignedAllocator(const AlignedAllocator<U>&) {}
    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
    void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }
    template <class U>
    bool operator==(const AlignedAllocator<U>&) const { return true; }
};
using Buffer = std::vector<double, AlignedAllocator<double>>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

enum class OpKind {
    leaf,
    matmul,
    transpose,
    reshape,
    add,
    mul_scalar,
    scale_shift,
    relu,
    layer_norm,
    softmax_lastdim,
    linear,
    concat,
    slice_lastdim,
    mse,
    conv1d_temporal,
    conv2d,
    batch_norm,
    attention,
};

std::string_view op_name(OpKind kind);
std::optional<OpKind> op_from_name(std::string_view name);
// Every differentiable kind, in declaration order.
std::span<const OpKind> differentiable_ops();

struct Node {
    Shape shape;
    Buffer value;
    Buffer grad;  // empty until backward reaches the node
    bool requires_grad = false;
    OpKind kind = OpKind::leaf;

    Buffer& grad_buffer();
};

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
    std::size_t numel() const { return node_->value.size(); }
    bool requires_grad() const { return node_->requires_grad; }
    OpKind kind() const { return node_->kind; }

    std::span<const double> data() const { return node_->value; }
    // Zero-length span when no gradient reached this tensor.
    std::span<const double> grad() const { return node_->grad; }
    double item() const;

    Node& node() const { return *node_; }
    const std::shared_ptr<Node>& ptr() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

class Tape {
public:
    // A non-recording tape evaluates ops without keeping adjoints (inference).
    explicit Tape(bool record = true) : record_(record) {}

    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Tensor constant(Shape shape, std::vector<double> values);
    Tensor parameter(Shape shape, std::vector<double> values);

    // Creates an output node; requires_grad follows the inputs.
    Tensor make_output(OpKind kind, Shape shape, std::span<const Tensor> inputs);
    void record(OpKind kind, std::vector<Tensor> inputs, Tensor output, std::function<void()> adjoint);

    // Populates grad of every parameter created on this tape. Parameters the
    // loss does not depend on receive an all-zero gradient.
    void backward(const Tensor& loss);

    bool recording() const { return record_; }
    std::size_t size() const { return entries_.size(); }
    const std::vector<Tensor>& parameters() const { return params_; }

private:
    struct Entry {
        OpKind kind;
        std::vector<Tensor> inputs;
        Tensor output;
        std::function<void()> adjoint;
    };
    std::vector<Entry> entries_;
    std::vector<Tensor> params_;
    bool record_;
};

// Test hook: scales the adjoint of one op kind so verification harnesses can
// prove they detect a broken rule. Process-wide; reset with std::nullopt.
void set_adjoint_fault(std::optional<OpKind> kind);
std::optional<OpKind> adjoint_fault();

}  // namespace myograph::ad
