#include "myograph/ops.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <string>

namespace myograph::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<RowMat>;
using CMapR = Eigen::Map<const RowMat>;
using StridedR = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using CStridedR = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;
using Vec = Eigen::Map<Eigen::VectorXd>;
using CVec = Eigen::Map<const Eigen::VectorXd>;

[[noreturn]] void shape_error(std::string_view op, const std::string& detail) {
    throw std::invalid_argument(std::string(op) + ": " + detail);
}

std::string two(const Tensor& a, const Tensor& b) { return shape_str(a.shape()) + " vs " + shape_str(b.shape()); }

CMapR cmat(const Buffer& v, std::size_t r, std::size_t c) {
    return CMapR(v.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}
MapR mat(Buffer& v, std::size_t r, std::size_t c) {
    return MapR(v.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

std::size_t last_dim(const Tensor& t) { return t.shape().back(); }

}  // namespace

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) shape_error("matmul", "shape mismatch " + two(a, b));
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    const Tensor ins[] = {a, b};
    Tensor out = tape.make_output(OpKind::matmul, {m, n}, ins);
    mat(out.node().value, m, n).noalias() = cmat(a.node().value, m, k) * cmat(b.node().value, k, n);
    auto an = a.ptr(), bn = b.ptr(), on = out.ptr();
    tape.record(OpKind::matmul, {a, b}, out, [an, bn, on, m, k, n] {
        auto dc = cmat(on->grad, m, n);
        if (an->requires_grad) mat(an->grad_buffer(), m, k).noalias() += dc * cmat(bn->value, k, n).transpose();
        if (bn->requires_grad) mat(bn->grad_buffer(), k, n).noalias() += cmat(an->value, m, k).transpose() * dc;
    });
    return out;
}

Tensor transpose(Tape& tape, const Tensor& a) {
    if (a.rank() != 2 && a.rank() != 3) shape_error("transpose", "needs rank 2 or 3, got " + shape_str(a.shape()));
    const std::size_t batch = a.rank() == 3 ? a.dim(0) : 1;
    const std::size_t m = a.shape()[a.rank() - 2], n = a.shape()[a.rank() - 1];
    Shape shape = a.shape();
    std::swap(shape[shape.size() - 1], shape[shape.size() - 2]);
    const Tensor ins[] = {a};
    Tensor out = tape.make_output(OpKind::transpose, shape, ins);
    for (std::size_t b = 0; b < batch; ++b) {
        MapR(out.node().value.data() + b * m * n, n, m) = CMapR(a.node().value.data() + b * m * n, m, n).transpose();
    }
    auto an = a.ptr(), on = out.ptr();
    tape.record(OpKind::transpose, {a}, out, [an, on, batch, m, n] {
        auto& ga = an->grad_buffer();
        for (std::size_t b = 0; b < batch; ++b)
            MapR(ga.data() + b * m * n, m, n) += CMapR(on->grad.data() + b * m * n, n, m).transpose();
    });
    return out;
}

Tensor reshape(Tape& tape, const Tensor& a, Shape shape) {
    if (numel(shape) != a.numel())
        shape_error("reshape", "cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
    const Tensor ins[] = {a};
    Tensor out = tape.make_output(OpKind::reshape, std::move(shape), ins);
    out.node().value = a.node().value;
    auto an = a.ptr(), on = out.ptr();
    tape.record(OpKind::reshape, {a}, out, [an, on] {
        auto& ga = an->grad_buffer();
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += on->grad[i];
    });
    return out;
}

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) shape_error("add", "shape mismatch " + two(a, b));
    const Tensor ins[] = {a, b};
    Tensor out = tape.make_output(OpKind::add, a.shape(), ins);
    auto& o = out.node().value;
    const auto& av = a.node().value;
    const auto& bv = b.node().value;
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] + bv[i];
    auto an = a.ptr(), bn = b.ptr(), on = out.ptr();
    tape.record(OpKind::add, {a, b}, out, [an, bn, on] {
        for (Node* n : {an.get(), bn.get()}) {
            if (!n->requires_grad) continue;
            auto& g = n->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += on->grad[i];
        }
    });
    return out;
}

Tensor mul_scalar(Tape& tape, const Tensor& a, double factor) {
    const Tensor ins[] = {a};
    Tensor out = tape.make_output(OpKind::mul_scalar, a.shape(), ins);
    auto& o = out.node().value;
    const auto& av = a.node().value;
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] * factor;
    auto an = a.ptr(), on = out.ptr();
    tape.record(OpKind::mul_scalar, {a}, out, [an, on, factor] {
        auto& g = an->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += on->grad[i] * factor;
    });
    return out;
}

Tensor scale_shift(Tape& tape, const Tensor& x, std::span<const double> scale, std::span<const double> shift) {
    const std::size_t d = last_dim(x);
    if (scale.size() != d || shift.size() != d)
        shape_error("scale_shift", "last axis of " + shape_str(x.shape()) + " vs scale/shift of length " +
                                       std::to_string(scale.size()) + "/" + std::to_string(shift.size()));
    const Tensor ins[] = {x};
    Tensor out = tape.make_output(OpKind::scale_shift, x.shape(), ins);
    auto& o = out.node().value;
    const auto& xv = x.node().value;
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = xv[i] * scale[i % d] + shift[i % d];
    auto xn = x.ptr(), on = out.ptr();
    Buffer s(scale.begin(), scale.end());
    tape.record(OpKind::scale_shift, {x}, out, [xn, on, s = std::move(s), d] {
        auto& g = xn->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += on->grad[i] * s[i % d];
    });
    return out;
}

Tensor relu(Tape& tape, const Tensor& a) {
    const Tensor ins[] = {a};
    Tensor out = tape.make_output(OpKind::relu, a.shape(), ins);
    auto& o = out.node().value;
    const auto& av = a.node().value;
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] > 0.0 ? av[i] : 0.0;
    auto an = a.ptr(), on = out.ptr();
    tape.record(OpKind::relu, {a}, out, [an, on] {
        auto& g = an->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i)
            if (an->value[i] > 0.0) g[i] += on->grad[i];
    });
    return out;
}

Tensor layer_norm(Tape& tape, const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    const std::size_t d = last_dim(x);
    if (gain.numel() != d || bias.numel() != d)
        shape_error("layer_norm", "input " + shape_str(x.shape()) + " with gain " + shape_str(gain.shape()) +
                                      " and bias " + shape_str(bias.shape()));
    const std::size_t rows = x.numel() / d;
    const Tensor ins[] = {x, gain, bias};
    Tensor out = tape.make_output(OpKind::layer_norm, x.shape(), ins);
    auto xhat = std::make_shared<Buffer>(x.numel());
    auto inv_std = std::make_shared<Buffer>(rows);
    const auto& xv = x.node().value;
    const auto& gv = gain.node().value;
    const auto& bv = bias.node().value;
    auto& o = out.node().value;
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = xv.data() + r * d;
        double mean = 0.0;
        for (std::size_t j = 0; j < d; ++j) mean += row[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
        var /= static_cast<double>(d);
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[r] = is;
        for (std::size_t j = 0; j < d; ++j) {
            const double h = (row[j] - mean) * is;
            (*xhat)[r * d + j] = h;
            o[r * d + j] = h * gv[j] + bv[j];
        }
    }
    auto xn = x.ptr(), gn = gain.ptr(), bn = bias.ptr(), on = out.ptr();
    tape.record(OpKind::layer_norm, {x, gain, bias}, out, [xn, gn, bn, on, xhat, inv_std, rows, d] {
        const auto& dy = on->grad;
        if (gn->requires_grad) {
            auto& gg = gn->grad_buffer();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < d; ++j) gg[j] += dy[r * d + j] * (*xhat)[r * d + j];
        }
        if (bn->requires_grad) {
            auto& gb = bn->grad_buffer();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < d; ++j) gb[j] += dy[r * d + j];
        }
        if (!xn->requires_grad) return;
        auto& gx = xn->grad_buffer();
        const double dd = static_cast<double>(d);
        for (std::size_t r = 0; r < rows; ++r) {
            double sum = 0.0, dot = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                const double dh = dy[r * d + j] * gn->value[j];
                sum += dh;
                dot += dh * (*xhat)[r * d + j];
            }
            const double is = (*inv_std)[r];
            for (std::size_t j = 0; j < d; ++j) {
                const double dh = dy[r * d + j] * gn->value[j];
                gx[r * d + j] += is / dd * (dd * dh - sum - (*xhat)[r * d + j] * dot);
            }
        }
    });
    return out;
}

Tensor softmax_lastdim(Tape& tape, const Tensor& x) {
    const std::size_t d = last_dim(x);
    const std::size_t rows = x.numel() / d;
    const Tensor ins[] = {x};
    Tensor out = tape.make_output(OpKind::softmax_lastdim, x.shape(), ins);
    const auto& xv = x.node().value;
    auto& o = out.node().value;
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = xv.data() + r * d;
        double mx = row[0];
        for (std::size_t j = 1; j < d; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            o[r * d + j] = std::exp(row[j] - mx);
            sum += o[r * d + j];
        }
        for (std::size_t j = 0; j < d; ++j) o[r * d + j] /= sum;
    }
    auto xn = x.ptr(), on = out.ptr();
    tape.record(OpKind::softmax_lastdim, {x}, out, [xn, on, rows, d] {
        auto& gx = xn->grad_buffer();
        const auto& y = on->value;
        const auto& dy = on->grad;
        for (std::size_t r = 0; r < rows; ++r) {
            double dot = 0.0;
            for (std::size_t j = 0; j < d; ++j) dot += dy[r * d + j] * y[r * d + j];
            for (std::size_t j = 0; j < d; ++j) gx[r * d + j] += y[r * d + j] * (dy[r * d + j] - dot);
        }
    });
    return out;
}

Tensor linear(Tape& tape, const Tensor& x, const Tensor& weight, const Tensor& bias) {
    if (x.rank() != 2 || weight.rank() != 2 || weight.dim(1) != x.dim(1) || bias.numel() != weight.dim(0))
        shape_error("linear", "input " + shape_str(x.shape()) + ", weight " + shape_str(weight.shape()) + ", bias " +
                                  shape_str(bias.shape()));
    const std::size_t rows = x.dim(0), in = x.dim(1), outd = weight.dim(0);
    const Tensor ins[] = {x, weight, bias};
    Tensor out = tape.make_output(OpKind::linear, {rows, outd}, ins);
    auto y = mat(out.node().value, rows, outd);
    y.noalias() = cmat(x.node().value, rows, in) * cmat(weight.node().value, outd, in).transpose();
    y.rowwise() += CVec(bias.node().value.data(), static_cast<Eigen::Index>(outd)).transpose();
    auto xn = x.ptr(), wn = weight.ptr(), bn = bias.ptr(), on = out.ptr();
    tape.record(OpKind::linear, {x, weight, bias}, out, [xn, wn, bn, on, rows, in, outd] {
        auto dy = cmat(on->grad, rows, outd);
        if (xn->requires_grad) mat(xn->grad_buffer(), rows, in).noalias() += dy * cmat(wn->value, outd, in);
        if (wn->requires_grad) mat(wn->grad_buffer(), outd, in).noalias() += dy.transpose() * cmat(xn->value, rows, in);
        if (bn->requires_grad) Vec(bn->grad_buffer().data(), static_cast<Eigen::Index>(outd)) += dy.colwise().sum().transpose();
    });
    return out;
}

Tensor concat(Tape& tape, std::span<const Tensor> parts) {
    if (parts.empty()) shape_error("concat", "no inputs");
    Shape lead(parts[0].shape().begin(), parts[0].shape().end() - 1);
    std::size_t total = 0;
    std::vector<std::size_t> widths;
    for (const auto& p : parts) {
        if (Shape(p.shape().begin(), p.shape().end() - 1) != lead)
            shape_error("concat", "leading extents differ: " + two(parts[0], p));
        widths.push_back(last_dim(p));
        total += last_dim(p);
    }
    const std::size_t rows = numel(lead);
    Shape shape = lead;
    shape.push_back(total);
    Tensor out = tape.make_output(OpKind::concat, shape, parts);
    auto& o = out.node().value;
    std::size_t offset = 0;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        const auto& pv = parts[i].node().value;
        for (std::size_t r = 0; r < rows; ++r)
            std::copy_n(pv.data() + r * widths[i], widths[i], o.data() + r * total + offset);
        offset += widths[i];
    }
    std::vector<std::shared_ptr<Node>> nodes;
    for (const auto& p : parts) nodes.push_back(p.ptr());
    auto on = out.ptr();
    tape.record(OpKind::concat, std::vector<Tensor>(parts.begin(), parts.end()), out,
                [nodes, on, widths, rows, total] {
                    std::size_t off = 0;
                    for (std::size_t i = 0; i < nodes.size(); ++i) {
                        if (nodes[i]->requires_grad) {
                            auto& g = nodes[i]->grad_buffer();
                            for (std::size_t r = 0; r < rows; ++r)
                                for (std::size_t j = 0; j < widths[i]; ++j)
                                    g[r * widths[i] + j] += on->grad[r * total + off + j];
                        }
                        off += widths[i];
                    }
                });
    return out;
}

Tensor slice_lastdim(Tape& tape, const Tensor& x, std::size_t begin, std::size_t end) {
    const std::size_t d = last_dim(x);
    if (begin >= end || end > d)
        shape_error("slice_lastdim", "range [" + std::to_string(begin) + "," + std::to_string(end) + ") of " +
                                         shape_str(x.shape()));
    const std::size_t rows = x.numel() / d, w = end - begin;
    Shape shape = x.shape();
    shape.back() = w;
    const Tensor ins[] = {x};
    Tensor out = tape.make_output(OpKind::slice_lastdim, shape, ins);
    for (std::size_t r = 0; r < rows; ++r)
        std::copy_n(x.node().value.data() + r * d + begin, w, out.node().value.data() + r * w);
    auto xn = x.ptr(), on = out.ptr();
    tape.record(OpKind::slice_lastdim, {x}, out, [xn, on, rows, d, w, begin] {
        auto& g = xn->grad_buffer();
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < w; ++j) g[r * d + begin + j] += on->grad[r * w + j];
    });
    return out;
}

Tensor mse(Tape& tape, const Tensor& pred, const Tensor& target) {
    if (pred.shape() != target.shape()) shape_error("mse", "shape mismatch " + two(pred, target));
    const Tensor ins[] = {pred, target};
    Tensor out = tape.make_output(OpKind::mse, {1}, ins);
    const auto& p = pred.node().value;
    const auto& t = target.node().value;
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) acc += (p[i] - t[i]) * (p[i] - t[i]);
    const double n = static_cast<double>(p.size());
    out.node().value[0] = acc / n;
    auto pn = pred.ptr(), tn = target.ptr(), on = out.ptr();
    tape.record(OpKind::mse, {pred, target}, out, [pn, tn, on, n] {
        const double g = on->grad[0] * 2.0 / n;
        if (pn->requires_grad) {
            auto& gp = pn->grad_buffer();
            for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g * (pn->value[i] - tn->value[i]);
        }
        if (tn->requires_grad) {
            auto& gt = tn->grad_buffer();
            for (std::size_t i = 0; i < gt.size(); ++i) gt[i] -= g * (pn->value[i] - tn->value[i]);
        }
    });
    return out;
}

Tensor conv1d_temporal(Tape& tape, const Tensor& x, const Tensor& kernel, const Tensor& bias) {
    const bool batched = x.rank() == 3;
    if ((x.rank() != 2 && !batched) || kernel.rank() != 3)
        shape_error("conv1d_temporal", "input " + shape_str(x.shape()) + " with kernel " + shape_str(kernel.shape()));
    const std::size_t batch = batched ? x.dim(0) : 1;
    const std::size_t cin = x.shape()[x.rank() - 2], steps = x.shape()[x.rank() - 1];
    const std::size_t cout = kernel.dim(0), ksz = kernel.dim(2);
    if (kernel.dim(1) != cin || ksz % 2 == 0 || bias.numel() != cout)
        shape_error("conv1d_temporal", "input " + shape_str(x.shape()) + ", kernel " + shape_str(kernel.shape()) +
                                           " (odd temporal extent required), bias " + shape_str(bias.shape()));
    const std::size_t pad = (ksz - 1) / 2, ncol = cin * ksz;
    Shape shape = batched ? Shape{batch, cout, steps} : Shape{cout, steps};
    const Tensor ins[] = {x, kernel, bias};
    Tensor out = tape.make_output(OpKind::conv1d_temporal, shape, ins);

    // cols[b] row (c*K + k), column t holds x[b, c, t + k - pad] or 0.
    auto cols = std::make_shared<Buffer>(batch * ncol * steps, 0.0);
    const auto& xv = x.node().value;
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t c = 0; c < cin; ++c)
            for (std::size_t k = 0; k < ksz; ++k) {
                double* dst = cols->data() + (b * ncol + c * ksz + k) * steps;
                const double* src = xv.data() + (b * cin + c) * steps;
                for (std::size_t t = 0; t < steps; ++t) {
                    const std::ptrdiff_t s = static_cast<std::ptrdiff_t>(t + k) - static_cast<std::ptrdiff_t>(pad);
                    if (s >= 0 && s < static_cast<std::ptrdiff_t>(steps)) dst[t] = src[s];
                }
            }
    auto w = cmat(kernel.node().value, cout, ncol);
    CVec bvec(bias.node().value.data(), static_cast<Eigen::Index>(cout));
    for (std::size_t b = 0; b < batch; ++b) {
        MapR y(out.node().value.data() + b * cout * steps, cout, steps);
        y.noalias() = w * CMapR(cols->data() + b * ncol * steps, ncol, steps);
        y.colwise() += bvec;
    }
    auto xn = x.ptr(), kn = kernel.ptr(), bn = bias.ptr(), on = out.ptr();
    tape.record(OpKind::conv1d_temporal, {x, kernel, bias}, out,
                [xn, kn, bn, on, cols, batch, cin, steps, cout, ksz, pad, ncol] {
                    auto w = cmat(kn->value, cout, ncol);
                    RowMat dcols(ncol, steps);
                    for (std::size_t b = 0; b < batch; ++b) {
                        CMapR dy(on->grad.data() + b * cout * steps, cout, steps);
                        CMapR cb(cols->data() + b * ncol * steps, ncol, steps);
                        if (kn->requires_grad) mat(kn->grad_buffer(), cout, ncol).noalias() += dy * cb.transpose();
                        if (bn->requires_grad)
                            Vec(bn->grad_buffer().data(), static_cast<Eigen::Index>(cout)) += dy.rowwise().sum();
                        if (!xn->requires_grad) continue;
                        dcols.noalias() = w.transpose() * dy;
                        auto& gx = xn->grad_buffer();
                        for (std::size_t c = 0; c < cin; ++c)
                            for (std::size_t k = 0; k < ksz; ++k) {
                                const double* src = dcols.data() + (c * ksz + k) * steps;
                                double* dst = gx.data() + (b * cin + c) * steps;
                                for (std::size_t t = 0; t < steps; ++t) {
                                    const std::ptrdiff_t s =
                                        static_cast<std::ptrdiff_t>(t + k) - static_cast<std::ptrdiff_t>(pad);
                                    if (s >= 0 && s < static_cast<std::ptrdiff_t>(steps)) dst[s] += src[t];
                                }
                            }
                    }
                });
    return out;
}

Tensor conv2d(Tape& tape, const Tensor& x, const Tensor& kernel, const Tensor& bias) {
    if (x.rank() != 4 || kernel.rank() != 4 || kernel.dim(1) != x.dim(1) || kernel.dim(2) > x.dim(2) ||
        kernel.dim(3) % 2 == 0 || bias.numel() != kernel.dim(0))
        shape_error("conv2d", "input " + shape_str(x.shape()) + ", kernel " + shape_str(kernel.shape()) + ", bias " +
                                  shape_str(bias.shape()));
    const std::size_t batch = x.dim(0), cin = x.dim(1), height = x.dim(2), steps = x.dim(3);
    const std::size_t cout = kernel.dim(0), kh = kernel.dim(2), kt = kernel.dim(3);
    const std::size_t hout = height - kh + 1, pad = (kt - 1) / 2;
    const std::size_t ncol = cin * kh * kt, npos = hout * steps;
    const Tensor ins[] = {x, kernel, bias};
    Tensor out = tape.make_output(OpKind::conv2d, {batch, cout, hout, steps}, ins);

    // cols[b] row ((c*KH + i)*KT + j), column (h*T + t) holds x[b, c, h+i, t+j-pad] or 0.
    auto cols = std::make_shared<Buffer>(batch * ncol * npos, 0.0);
    const auto& xv = x.node().value;
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t c = 0; c < cin; ++c)
            for (std::size_t i = 0; i < kh; ++i)
                for (std::size_t j = 0; j < kt; ++j) {
                    double* dst = cols->data() + (b * ncol + (c * kh + i) * kt + j) * npos;
                    for (std::size_t h = 0; h < hout; ++h) {
                        const double* src = xv.data() + ((b * cin + c) * height + h + i) * steps;
                        for (std::size_t t = 0; t < steps; ++t) {
                            const std::ptrdiff_t s = static_cast<std::ptrdiff_t>(t + j) - static_cast<std::ptrdiff_t>(pad);
                            if (s >= 0 && s < static_cast<std::ptrdiff_t>(steps)) dst[h * steps + t] = src[s];
                        }
                    }
                }
    auto w = cmat(kernel.node().value, cout, ncol);
    CVec bvec(bias.node().value.data(), static_cast<Eigen::Index>(cout));
    for (std::size_t b = 0; b < batch; ++b) {
        MapR y(out.node().value.data() + b * cout * npos, cout, npos);
        y.noalias() = w * CMapR(cols->data() + b * ncol * npos, ncol, npos);
        y.colwise() += bvec;
    }
    auto xn = x.ptr(), kn = kernel.ptr(), bn = bias.ptr(), on = out.ptr();
    tape.record(OpKind::conv2d, {x, kernel, bias}, out,
                [xn, kn, bn, on, cols, batch, cin, height, steps, cout, kh, kt, hout, pad, ncol, npos] {
                    auto w = cmat(kn->value, cout, ncol);
                    RowMat dcols(ncol, npos);
                    for (std::size_t b = 0; b < batch; ++b) {
                        CMapR dy(on->grad.data() + b * cout * npos, cout, npos);
                        CMapR cb(cols->data() + b * ncol * npos, ncol, npos);
                        if (kn->requires_grad) mat(kn->grad_buffer(), cout, ncol).noalias() += dy * cb.transpose();
                        if (bn->requires_grad)
                            Vec(bn->grad_buffer().data(), static_cast<Eigen::Index>(cout)) += dy.rowwise().sum();
                        if (!xn->requires_grad) continue;
                        dcols.noalias() = w.transpose() * dy;
                        auto& gx = xn->grad_buffer();
                        for (std::size_t c = 0; c < cin; ++c)
                            for (std::size_t i = 0; i < kh; ++i)
                                for (std::size_t j = 0; j < kt; ++j) {
                                    const double* src = dcols.data() + ((c * kh + i) * kt + j) * npos;
                                    for (std::size_t h = 0; h < hout; ++h) {
                                        double* dst = gx.data() + ((b * cin + c) * height + h + i) * steps;
                                        for (std::size_t t = 0; t < steps; ++t) {
                                            const std::ptrdiff_t s =
                                                static_cast<std::ptrdiff_t>(t + j) - static_cast<std::ptrdiff_t>(pad);
                                            if (s >= 0 && s < static_cast<std::ptrdiff_t>(steps))
                                                dst[s] += src[h * steps + t];
                                        }
                                    }
                                }
                    }
                });
    return out;
}

Tensor batch_norm(Tape& tape, const Tensor& x, const Tensor& gamma, const Tensor& beta, const BatchNormState& state) {
    if (x.rank() != 4 || gamma.numel() != x.dim(1) || beta.numel() != x.dim(1))
        shape_error("batch_norm", "input " + shape_str(x.shape()) + ", gamma " + shape_str(gamma.shape()) + ", beta " +
                                      shape_str(beta.shape()));
    const std::size_t batch = x.dim(0), chans = x.dim(1), inner = x.dim(2) * x.dim(3);
    const std::size_t count = batch * inner;
    if (!state.training && (!state.running_mean || !state.running_var))
        throw std::invalid_argument("batch_norm: inference mode needs running statistics");
    const Tensor ins[] = {x, gamma, beta};
    Tensor out = tape.make_output(OpKind::batch_norm, x.shape(), ins);
    const auto& xv = x.node().value;
    auto xhat = std::make_shared<Buffer>(x.numel());
    auto inv_std = std::make_shared<Buffer>(chans);
    for (std::size_t c = 0; c < chans; ++c) {
        double mean = 0.0, var = 0.0;
        if (state.training) {
            for (std::size_t b = 0; b < batch; ++b)
                for (std::size_t i = 0; i < inner; ++i) mean += xv[(b * chans + c) * inner + i];
            mean /= static_cast<double>(count);
            for (std::size_t b = 0; b < batch; ++b)
                for (std::size_t i = 0; i < inner; ++i) {
                    const double dlt = xv[(b * chans + c) * inner + i] - mean;
                    var += dlt * dlt;
                }
            var /= static_cast<double>(count);
            if (state.update_mean && state.update_var) {
                const double unbiased = count > 1 ? var * static_cast<double>(count) / static_cast<double>(count - 1) : var;
                auto& rm = *state.update_mean;
                auto& rv = *state.update_var;
                rm[c] = (1.0 - state.momentum) * rm[c] + state.momentum * mean;
                rv[c] = (1.0 - state.momentum) * rv[c] + state.momentum * unbiased;
            }
        } else {
            mean = (*state.running_mean)[c];
            var = (*state.running_var)[c];
        }
        const double is = 1.0 / std::sqrt(var + state.eps);
        (*inv_std)[c] = is;
        const double g = gamma.node().value[c], bshift = beta.node().value[c];
        for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t i = 0; i < inner; ++i) {
                const std::size_t idx = (b * chans + c) * inner + i;
                const double h = (xv[idx] - mean) * is;
                (*xhat)[idx] = h;
                out.node().value[idx] = g * h + bshift;
            }
    }
    auto xn = x.ptr(), gn = gamma.ptr(), bn = beta.ptr(), on = out.ptr();
    const bool training = state.training;
    tape.record(OpKind::batch_norm, {x, gamma, beta}, out,
                [xn, gn, bn, on, xhat, inv_std, batch, chans, inner, count, training] {
                    const auto& dy = on->grad;
                    for (std::size_t c = 0; c < chans; ++c) {
                        double sum = 0.0, dot = 0.0;
                        for (std::size_t b = 0; b < batch; ++b)
                            for (std::size_t i = 0; i < inner; ++i) {
                                const std::size_t idx = (b * chans + c) * inner + i;
                                sum += dy[idx];
                                dot += dy[idx] * (*xhat)[idx];
                            }
                        if (gn->requires_grad) gn->grad_buffer()[c] += dot;
                        if (bn->requires_grad) bn->grad_buffer()[c] += sum;
                        if (!xn->requires_grad) continue;
                        auto& gx = xn->grad_buffer();
                        const double scale = gn->value[c] * (*inv_std)[c];
                        const double n = static_cast<double>(count);
                        for (std::size_t b = 0; b < batch; ++b)
                            for (std::size_t i = 0; i < inner; ++i) {
                                const std::size_t idx = (b * chans + c) * inner + i;
                                gx[idx] += training ? scale / n * (n * dy[idx] - sum - (*xhat)[idx] * dot)
                                                    : scale * dy[idx];
                            }
                    }
                });
    return out;
}

Tensor multi_head_attention(Tape& tape, const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                            std::size_t seq_len, std::vector<double>* probs) {
    if (q.rank() != 2 || q.shape() != k.shape() || q.shape() != v.shape())
        shape_error("attention", "q/k/v shapes " + shape_str(q.shape()) + ", " + shape_str(k.shape()) + ", " +
                                     shape_str(v.shape()));
    const std::size_t rows = q.dim(0), d = q.dim(1);
    if (heads == 0 || d % heads != 0 || seq_len == 0 || rows % seq_len != 0)
        shape_error("attention", "input " + shape_str(q.shape()) + " cannot split into " + std::to_string(heads) +
                                     " heads over sequences of " + std::to_string(seq_len));
    const std::size_t batch = rows / seq_len, dh = d / heads, tt = seq_len;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const Tensor ins[] = {q, k, v};
    Tensor out = tape.make_output(OpKind::attention, {rows, d}, ins);
    auto p = std::make_shared<Buffer>(batch * heads * tt * tt);
    const Eigen::OuterStride<> stride(static_cast<Eigen::Index>(d));
    auto block = [&](const Buffer& buf, std::size_t b, std::size_t h) {
        return CStridedR(buf.data() + b * tt * d + h * dh, tt, dh, stride);
    };
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t h = 0; h < heads; ++h) {
            MapR ph(p->data() + (b * heads + h) * tt * tt, tt, tt);
            ph.noalias() = scale * block(q.node().value, b, h) * block(k.node().value, b, h).transpose();
            for (Eigen::Index r = 0; r < ph.rows(); ++r) {
                auto row = ph.row(r);
                row.array() = (row.array() - row.maxCoeff()).exp();
                row /= row.sum();
            }
            StridedR(out.node().value.data() + b * tt * d + h * dh, tt, dh, stride).noalias() =
                ph * block(v.node().value, b, h);
        }
    if (probs) probs->assign(p->begin(), p->end());
    auto qn = q.ptr(), kn = k.ptr(), vn = v.ptr(), on = out.ptr();
    tape.record(OpKind::attention, {q, k, v}, out, [qn, kn, vn, on, p, batch, heads, tt, d, dh, scale] {
        const Eigen::OuterStride<> stride(static_cast<Eigen::Index>(d));
        auto cblk = [&](const Buffer& buf, std::size_t b, std::size_t h) {
            return CStridedR(buf.data() + b * tt * d + h * dh, tt, dh, stride);
        };
        auto blk = [&](Buffer& buf, std::size_t b, std::size_t h) {
            return StridedR(buf.data() + b * tt * d + h * dh, tt, dh, stride);
        };
        RowMat dp(tt, tt);
        for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t h = 0; h < heads; ++h) {
                CMapR ph(p->data() + (b * heads + h) * tt * tt, tt, tt);
                auto dout = cblk(on->grad, b, h);
                if (vn->requires_grad) blk(vn->grad_buffer(), b, h).noalias() += ph.transpose() * dout;
                dp.noalias() = dout * cblk(vn->value, b, h).transpose();
                // softmax adjoint, folded with the score scale
                for (Eigen::Index r = 0; r < dp.rows(); ++r) {
                    const double dot = dp.row(r).dot(ph.row(r));
                    dp.row(r) = (ph.row(r).array() * (dp.row(r).array() - dot) * scale).matrix();
                }
                if (qn->requires_grad) blk(qn->grad_buffer(), b, h).noalias() += dp * cblk(kn->value, b, h);
                if (kn->requires_grad) blk(kn->grad_buffer(), b, h).noalias() += dp.transpose() * cblk(qn->value, b, h);
            }
    });
    return out;
}

}  // namespace myograph::ad
