#pragma once

// Differentiable ops. Shapes are explicit: no broadcasting beyond the scalar
// factor of mul_scalar. Every op throws std::invalid_argument naming the
// offending shapes when its inputs do not fit.

#include <span>
#include <vector>

#include "myograph/tensor.hpp"

namespace myograph::ad {

// [m,k] x [k,n] -> [m,n]
Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);
// Swaps the last two axes of a rank-2 or rank-3 tensor.
Tensor transpose(Tape& tape, const Tensor& a);
Tensor reshape(Tape& tape, const Tensor& a, Shape shape);
Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul_scalar(Tape& tape, const Tensor& a, double factor);
// y[..., j] = x[..., j] * scale[j] + shift[j]; scale and shift are constants.
Tensor scale_shift(Tape& tape, const Tensor& x, std::span<const double> scale, std::span<const double> shift);
// Subgradient at exactly 0 is 0.
Tensor relu(Tape& tape, const Tensor& a);
// Normalizes each row of the last axis, then applies gain/bias of that length.
Tensor layer_norm(Tape& tape, const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);
Tensor softmax_lastdim(Tape& tape, const Tensor& x);
// x [rows, in], weight [out, in], bias [out] -> [rows, out]
Tensor linear(Tape& tape, const Tensor& x, const Tensor& weight, const Tensor& bias);
// Concatenates along the last axis; leading extents must agree.
Tensor concat(Tape& tape, std::span<const Tensor> parts);
Tensor slice_lastdim(Tape& tape, const Tensor& x, std::size_t begin, std::size_t end);
// Scalar mean of squared differences.
Tensor mse(Tape& tape, const Tensor& pred, const Tensor& target);

// x [C_in, T] or [B, C_in, T]; kernel [C_out, C_in, K] with K odd; bias [C_out].
// Stride 1 with (K-1)/2 zeros on each side, so the output keeps length T.
Tensor conv1d_temporal(Tape& tape, const Tensor& x, const Tensor& kernel, const Tensor& bias);

// x [B, C_in, H, T]; kernel [C_out, C_in, KH, KT] with KT odd; bias [C_out].
// Valid along H (H_out = H - KH + 1), same-padded along T.
Tensor conv2d(Tape& tape, const Tensor& x, const Tensor& kernel, const Tensor& bias);

struct BatchNormState {
    const std::vector<double>* running_mean = nullptr;  // read in inference mode
    const std::vector<double>* running_var = nullptr;
    std::vector<double>* update_mean = nullptr;  // written in training mode
    std::vector<double>* update_var = nullptr;
    double momentum = 0.1;
    double eps = 1e-5;
    bool training = true;
};

// Per-channel normalization of x [B, C, H, T]. In training mode statistics
// come from the batch and are folded into the update buffers when given; in
// inference mode the running buffers are used as constants.
Tensor batch_norm(Tape& tape, const Tensor& x, const Tensor& gamma, const Tensor& beta, const BatchNormState& state);

// Scaled dot-product self attention, unmasked. q, k, v are [B*T, d] with the
// batch laid out as consecutive blocks of seq_len rows. Heads split d evenly.
// When probs is given it receives the attention weights, [B, heads, T, T].
Tensor multi_head_attention(Tape& tape, const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                            std::size_t seq_len, std::vector<double>* probs = nullptr);

}  // namespace myograph::ad
