// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>

#include "plenopt/tensor.hpp"

// Tensor op catalog. Every op computes values eagerly and, when a Tape is
// active and an input is tracked, records a backward closure. Backward
// closures only ever accumulate (+=) into input grad slots.

namespace plenopt {

namespace detail {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using ECMap = Eigen::Map<const EMat>;

inline Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
    std::size_t r = std::max(a.size(), b.size());
    Shape out(r, 1);
    for (std::size_t i = 0; i < r; ++i) {
        std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
        std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
        if (da != db && da != 1 && db != 1)
            throw std::invalid_argument(std::string(op) + ": shapes " + shape_str(a) + " and " +
                                        shape_str(b) + " are not broadcastable");
        out[i] = std::max(da, db);
    }
    return out;
}

// Row-major strides of `from` as seen through broadcast target `to`
// (stride 0 on broadcast axes).
inline std::vector<std::size_t> broadcast_strides(const Shape& from, const Shape& to) {
    std::vector<std::size_t> strides(to.size(), 0);
    std::size_t offset = to.size() - from.size();
    std::size_t s = 1;
    for (std::size_t i = from.size(); i-- > 0;) {
        strides[i + offset] = (from[i] == 1 && to[i + offset] != 1) ? 0 : s;
        s *= from[i];
    }
    return strides;
}

// Iterates the output of a broadcast binary op in row-major order,
// yielding (out_offset, a_offset, b_offset).
template <class F>
inline void broadcast_zip(const Shape& out, const std::vector<std::size_t>& astr,
                          const std::vector<std::size_t>& bstr, F&& f) {
    const std::size_t total = numel(out);
    if (total == 0) return;
    const std::size_t r = out.size();
    std::vector<std::size_t> idx(r, 0);
    std::size_t ao = 0, bo = 0;
    for (std::size_t o = 0;;) {
        f(o, ao, bo);
        if (++o == total) return;
        for (std::size_t d = r; d-- > 0;) {
            ++idx[d];
            ao += astr[d];
            bo += bstr[d];
            if (idx[d] < out[d]) break;
            ao -= astr[d] * out[d];
            bo -= bstr[d] * out[d];
            idx[d] = 0;
        }
    }
}

inline bool should_track(const Tensor& t) {
    return t.impl()->requires_grad || t.impl()->tracked;
}

inline void mark_output(Tensor& out) {
    if (Tape::active()) out.impl()->tracked = true;
}

// out[i] = fwd(x[i]); backward: gx[i] += dfdx(x[i], out[i]) * gout[i]
template <class Fwd, class Dfdx>
inline Tensor unary_op(const Tensor& x, Fwd fwd, Dfdx dfdx) {
    Tensor out = Tensor::zeros(x.shape());
    const auto xv = x.values();
    auto& ov = out.mutable_values();
    for (std::size_t i = 0; i < xv.size(); ++i) ov[i] = fwd(xv[i]);
    if (Tape* tape = Tape::active(); tape && should_track(x)) {
        mark_output(out);
        auto xi = x.impl();
        auto oi = out.impl();
        tape->record([xi, oi, dfdx] {
            if (oi->grad.empty()) return;
            xi->ensure_grad();
            for (std::size_t i = 0; i < xi->values.size(); ++i)
                xi->grad[i] += dfdx(xi->values[i], oi->values[i]) * oi->grad[i];
        });
    }
    return out;
}

// Broadcasting binary op. dfda/dfdb map (a, b, out_grad) to the gradient
// contribution; contributions are accumulated through the broadcast map,
// which sums over broadcast axes.
template <class Fwd, class Dfda, class Dfdb>
inline Tensor binary_op(const char* name, const Tensor& a, const Tensor& b, Fwd fwd, Dfda dfda,
                        Dfdb dfdb) {
    const Shape out_shape = broadcast_shape(a.shape(), b.shape(), name);
    Tensor out = Tensor::zeros(out_shape);
    const auto av = a.values();
    const auto bv = b.values();
    auto& ov = out.mutable_values();
    if (a.shape() == b.shape()) {
        for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = fwd(av[i], bv[i]);
    } else {
        auto astr = broadcast_strides(a.shape(), out_shape);
        auto bstr = broadcast_strides(b.shape(), out_shape);
        broadcast_zip(out_shape, astr, bstr,
                      [&](std::size_t o, std::size_t ao, std::size_t bo) { ov[o] = fwd(av[ao], bv[bo]); });
    }
    Tape* tape = Tape::active();
    const bool ta = tape && should_track(a);
    const bool tb = tape && should_track(b);
    if (ta || tb) {
        mark_output(out);
        auto ai = a.impl();
        auto bi = b.impl();
        auto oi = out.impl();
        Shape osh = out_shape;
        tape->record([ai, bi, oi, osh, ta, tb, dfda, dfdb] {
            if (oi->grad.empty()) return;
            if (ta) ai->ensure_grad();
            if (tb) bi->ensure_grad();
            if (ai->shape == bi->shape) {
                for (std::size_t i = 0; i < oi->grad.size(); ++i) {
                    double g = oi->grad[i];
                    if (ta) ai->grad[i] += dfda(ai->values[i], bi->values[i], g);
                    if (tb) bi->grad[i] += dfdb(ai->values[i], bi->values[i], g);
                }
            } else {
                auto astr = broadcast_strides(ai->shape, osh);
                auto bstr = broadcast_strides(bi->shape, osh);
                broadcast_zip(osh, astr, bstr, [&](std::size_t o, std::size_t ao, std::size_t bo) {
                    double g = oi->grad[o];
                    if (ta) ai->grad[ao] += dfda(ai->values[ao], bi->values[bo], g);
                    if (tb) bi->grad[bo] += dfdb(ai->values[ao], bi->values[bo], g);
                });
            }
        });
    }
    return out;
}

}  // namespace detail

// ---- elementwise binary ----

inline Tensor add(const Tensor& a, const Tensor& b) {
    return detail::binary_op(
        "add", a, b, [](double x, double y) { return x + y; },
        [](double, double, double g) { return g; }, [](double, double, double g) { return g; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    return detail::binary_op(
        "sub", a, b, [](double x, double y) { return x - y; },
        [](double, double, double g) { return g; }, [](double, double, double g) { return -g; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    return detail::binary_op(
        "mul", a, b, [](double x, double y) { return x * y; },
        [](double, double y, double g) { return g * y; },
        [](double x, double, double g) { return g * x; });
}

// ---- elementwise unary ----

inline Tensor neg(const Tensor& x) {
    return detail::unary_op(x, [](double v) { return -v; }, [](double, double) { return -1.0; });
}

inline Tensor sin(const Tensor& x) {
    return detail::unary_op(x, [](double v) { return std::sin(v); },
                            [](double v, double) { return std::cos(v); });
}

inline Tensor cos(const Tensor& x) {
    return detail::unary_op(x, [](double v) { return std::cos(v); },
                            [](double v, double) { return -std::sin(v); });
}

inline Tensor exp(const Tensor& x) {
    return detail::unary_op(x, [](double v) { return std::exp(v); },
                            [](double, double o) { return o; });
}

inline Tensor log(const Tensor& x) {
    return detail::unary_op(x, [](double v) { return std::log(v); },
                            [](double v, double) { return 1.0 / v; });
}

inline Tensor reciprocal(const Tensor& x) {
    return detail::unary_op(x, [](double v) { return 1.0 / v; },
                            [](double, double o) { return -o * o; });
}

inline Tensor sqrt(const Tensor& x) {
    return detail::unary_op(x, [](double v) { return std::sqrt(v); },
                            [](double, double o) { return 0.5 / o; });
}

inline Tensor pow_scalar(const Tensor& x, double e) {
    return detail::unary_op(
        x, [e](double v) { return std::pow(v, e); },
        [e](double v, double) { return e * std::pow(v, e - 1.0); });
}

inline Tensor relu(const Tensor& x) {
    return detail::unary_op(x, [](double v) { return v > 0.0 ? v : 0.0; },
                            [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

inline Tensor sigmoid(const Tensor& x) {
    return detail::unary_op(
        x,
        [](double v) {
            return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
        },
        [](double, double o) { return o * (1.0 - o); });
}

inline Tensor softplus(const Tensor& x) {
    return detail::unary_op(
        x,
        [](double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); },
        [](double v, double) {
            return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
        });
}

inline Tensor scale(const Tensor& x, double c) {
    return detail::unary_op(x, [c](double v) { return c * v; }, [c](double, double) { return c; });
}

inline Tensor add_scalar(const Tensor& x, double c) {
    return detail::unary_op(x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

// ---- matrix ops ----

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0])
        throw std::invalid_argument("matmul: shapes " + shape_str(a.shape()) + " and " +
                                    shape_str(b.shape()) + " do not compose");
    const auto m = static_cast<Eigen::Index>(a.shape()[0]);
    const auto k = static_cast<Eigen::Index>(a.shape()[1]);
    const auto n = static_cast<Eigen::Index>(b.shape()[1]);
    Tensor out = Tensor::zeros({a.shape()[0], b.shape()[1]});
    detail::ECMap A(a.values().data(), m, k), B(b.values().data(), k, n);
    detail::EMap O(out.mutable_values().data(), m, n);
    O.noalias() = A * B;
    Tape* tape = Tape::active();
    const bool ta = tape && detail::should_track(a);
    const bool tb = tape && detail::should_track(b);
    if (ta || tb) {
        detail::mark_output(out);
        auto ai = a.impl();
        auto bi = b.impl();
        auto oi = out.impl();
        tape->record([ai, bi, oi, m, k, n, ta, tb] {
            if (oi->grad.empty()) return;
            detail::ECMap A(ai->values.data(), m, k), B(bi->values.data(), k, n);
            detail::ECMap G(oi->grad.data(), m, n);
            if (ta) {
                ai->ensure_grad();
                detail::EMap GA(ai->grad.data(), m, k);
                GA.noalias() += G * B.transpose();
            }
            if (tb) {
                bi->ensure_grad();
                detail::EMap GB(bi->grad.data(), k, n);
                GB.noalias() += A.transpose() * G;
            }
        });
    }
    return out;
}

inline Tensor transpose(const Tensor& x) {
    if (x.rank() != 2)
        throw std::invalid_argument("transpose: expected rank 2, got " + shape_str(x.shape()));
    const std::size_t m = x.shape()[0], n = x.shape()[1];
    Tensor out = Tensor::zeros({n, m});
    const auto xv = x.values();
    auto& ov = out.mutable_values();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) ov[j * m + i] = xv[i * n + j];
    if (Tape* tape = Tape::active(); tape && detail::should_track(x)) {
        detail::mark_output(out);
        auto xi = x.impl();
        auto oi = out.impl();
        tape->record([xi, oi, m, n] {
            if (oi->grad.empty()) return;
            xi->ensure_grad();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) xi->grad[i * n + j] += oi->grad[j * m + i];
        });
    }
    return out;
}

// ---- reductions ----

inline Tensor sum(const Tensor& x) {
    Tensor out = Tensor::zeros({1});
    const auto xv = x.values();
    double s = 0.0;
    for (double v : xv) s += v;
    out.mutable_values()[0] = s;
    if (Tape* tape = Tape::active(); tape && detail::should_track(x)) {
        detail::mark_output(out);
        auto xi = x.impl();
        auto oi = out.impl();
        tape->record([xi, oi] {
            if (oi->grad.empty()) return;
            xi->ensure_grad();
            const double g = oi->grad[0];
            for (double& gx : xi->grad) gx += g;
        });
    }
    return out;
}

inline Tensor mean(const Tensor& x) {
    return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

namespace detail {
// Decomposes shape around `axis` into (outer, n, inner) for strided loops.
inline void axis_split(const Shape& s, std::size_t axis, std::size_t& outer, std::size_t& n,
                       std::size_t& inner) {
    if (axis >= s.size()) throw std::invalid_argument("axis out of range for " + shape_str(s));
    outer = 1;
    inner = 1;
    n = s[axis];
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
}
}  // namespace detail

inline Tensor sum_axis(const Tensor& x, std::size_t axis, bool keepdim = true) {
    std::size_t outer, n, inner;
    detail::axis_split(x.shape(), axis, outer, n, inner);
    Shape osh = x.shape();
    if (keepdim)
        osh[axis] = 1;
    else
        osh.erase(osh.begin() + static_cast<std::ptrdiff_t>(axis));
    if (osh.empty()) osh = {1};
    Tensor out = Tensor::zeros(osh);
    const auto xv = x.values();
    auto& ov = out.mutable_values();
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t i = 0; i < inner; ++i)
                ov[o * inner + i] += xv[(o * n + j) * inner + i];
    if (Tape* tape = Tape::active(); tape && detail::should_track(x)) {
        detail::mark_output(out);
        auto xi = x.impl();
        auto oi = out.impl();
        tape->record([xi, oi, outer, n, inner] {
            if (oi->grad.empty()) return;
            xi->ensure_grad();
            for (std::size_t o = 0; o < outer; ++o)
                for (std::size_t j = 0; j < n; ++j)
                    for (std::size_t i = 0; i < inner; ++i)
                        xi->grad[(o * n + j) * inner + i] += oi->grad[o * inner + i];
        });
    }
    return out;
}

inline Tensor mean_axis(const Tensor& x, std::size_t axis, bool keepdim = true) {
    return scale(sum_axis(x, axis, keepdim), 1.0 / static_cast<double>(x.shape()[axis]));
}

// ---- shape ops ----

inline Tensor reshape(const Tensor& x, Shape shape) {
    if (detail::numel(shape) != x.size())
        throw std::invalid_argument("reshape: cannot view " + shape_str(x.shape()) + " as " +
                                    shape_str(shape));
    Tensor out = Tensor::from_values(std::move(shape),
                                     std::vector<double>(x.values().begin(), x.values().end()));
    if (Tape* tape = Tape::active(); tape && detail::should_track(x)) {
        detail::mark_output(out);
        auto xi = x.impl();
        auto oi = out.impl();
        tape->record([xi, oi] {
            if (oi->grad.empty()) return;
            xi->ensure_grad();
            for (std::size_t i = 0; i < xi->grad.size(); ++i) xi->grad[i] += oi->grad[i];
        });
    }
    return out;
}

inline Tensor broadcast_to(const Tensor& x, const Shape& shape) {
    const Shape osh = detail::broadcast_shape(x.shape(), shape, "broadcast_to");
    if (osh != shape)
        throw std::invalid_argument("broadcast_to: " + shape_str(x.shape()) +
                                    " does not broadcast to " + shape_str(shape));
    Tensor out = Tensor::zeros(shape);
    const auto xv = x.values();
    auto& ov = out.mutable_values();
    auto xstr = detail::broadcast_strides(x.shape(), shape);
    detail::broadcast_zip(shape, xstr, xstr,
                          [&](std::size_t o, std::size_t xo, std::size_t) { ov[o] = xv[xo]; });
    if (Tape* tape = Tape::active(); tape && detail::should_track(x)) {
        detail::mark_output(out);
        auto xi = x.impl();
        auto oi = out.impl();
        Shape sh = shape;
        tape->record([xi, oi, sh] {
            if (oi->grad.empty()) return;
            xi->ensure_grad();
            auto xstr = detail::broadcast_strides(xi->shape, sh);
            detail::broadcast_zip(sh, xstr, xstr, [&](std::size_t o, std::size_t xo, std::size_t) {
                xi->grad[xo] += oi->grad[o];
            });
        });
    }
    return out;
}

inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) throw std::invalid_argument("concat: no inputs");
    Shape osh = parts[0].shape();
    if (axis >= osh.size()) throw std::invalid_argument("concat: axis out of range");
    std::size_t total = 0;
    for (const Tensor& p : parts) {
        Shape s = p.shape();
        if (s.size() != osh.size())
            throw std::invalid_argument("concat: rank mismatch " + shape_str(s) + " vs " +
                                        shape_str(osh));
        for (std::size_t i = 0; i < s.size(); ++i)
            if (i != axis && s[i] != osh[i])
                throw std::invalid_argument("concat: shapes " + shape_str(s) + " and " +
                                            shape_str(osh) + " differ off-axis");
        total += s[axis];
    }
    osh[axis] = total;
    Tensor out = Tensor::zeros(osh);
    std::size_t outer, n, inner;
    detail::axis_split(osh, axis, outer, n, inner);
    auto& ov = out.mutable_values();
    std::size_t off = 0;  // running offset along axis
    bool any_tracked = false;
    for (const Tensor& p : parts) {
        const std::size_t pn = p.shape()[axis];
        const auto pv = p.values();
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t j = 0; j < pn; ++j)
                for (std::size_t i = 0; i < inner; ++i)
                    ov[(o * n + off + j) * inner + i] = pv[(o * pn + j) * inner + i];
        off += pn;
        any_tracked = any_tracked || detail::should_track(p);
    }
    if (Tape* tape = Tape::active(); tape && any_tracked) {
        detail::mark_output(out);
        std::vector<std::shared_ptr<detail::TensorImpl>> impls;
        impls.reserve(parts.size());
        for (const Tensor& p : parts) impls.push_back(p.impl());
        auto oi = out.impl();
        tape->record([impls, oi, outer, n, inner, axis] {
            if (oi->grad.empty()) return;
            std::size_t off = 0;
            for (auto& pi : impls) {
                const std::size_t pn = pi->shape[axis];
                if (pi->wants_grad()) {
                    pi->ensure_grad();
                    for (std::size_t o = 0; o < outer; ++o)
                        for (std::size_t j = 0; j < pn; ++j)
                            for (std::size_t i = 0; i < inner; ++i)
                                pi->grad[(o * pn + j) * inner + i] +=
                                    oi->grad[(o * n + off + j) * inner + i];
                }
                off += pn;
            }
        });
    }
    return out;
}

inline Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t len) {
    std::size_t outer, n, inner;
    detail::axis_split(x.shape(), axis, outer, n, inner);
    if (start + len > n)
        throw std::invalid_argument("slice: [" + std::to_string(start) + "," +
                                    std::to_string(start + len) + ") exceeds axis of " +
                                    shape_str(x.shape()));
    Shape osh = x.shape();
    osh[axis] = len;
    Tensor out = Tensor::zeros(osh);
    const auto xv = x.values();
    auto& ov = out.mutable_values();
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t j = 0; j < len; ++j)
            for (std::size_t i = 0; i < inner; ++i)
                ov[(o * len + j) * inner + i] = xv[(o * n + start + j) * inner + i];
    if (Tape* tape = Tape::active(); tape && detail::should_track(x)) {
        detail::mark_output(out);
        auto xi = x.impl();
        auto oi = out.impl();
        tape->record([xi, oi, outer, n, inner, start, len] {
            if (oi->grad.empty()) return;
            xi->ensure_grad();
            for (std::size_t o = 0; o < outer; ++o)
                for (std::size_t j = 0; j < len; ++j)
                    for (std::size_t i = 0; i < inner; ++i)
                        xi->grad[(o * n + start + j) * inner + i] += oi->grad[(o * len + j) * inner + i];
        });
    }
    return out;
}

// Exclusive prefix sum along `axis`: out[..., k, ...] = sum_{j < k} x[..., j, ...].
inline Tensor cumsum_exclusive(const Tensor& x, std::size_t axis) {
    std::size_t outer, n, inner;
    detail::axis_split(x.shape(), axis, outer, n, inner);
    Tensor out = Tensor::zeros(x.shape());
    const auto xv = x.values();
    auto& ov = out.mutable_values();
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i) {
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                ov[(o * n + j) * inner + i] = acc;
                acc += xv[(o * n + j) * inner + i];
            }
        }
    if (Tape* tape = Tape::active(); tape && detail::should_track(x)) {
        detail::mark_output(out);
        auto xi = x.impl();
        auto oi = out.impl();
        tape->record([xi, oi, outer, n, inner] {
            if (oi->grad.empty()) return;
            xi->ensure_grad();
            // d out_k / d x_j = [j < k]  =>  gx_j += sum_{k > j} gout_k
            for (std::size_t o = 0; o < outer; ++o)
                for (std::size_t i = 0; i < inner; ++i) {
                    double acc = 0.0;
                    for (std::size_t j = n; j-- > 0;) {
                        xi->grad[(o * n + j) * inner + i] += acc;
                        acc += oi->grad[(o * n + j) * inner + i];
                    }
                }
        });
    }
    return out;
}

// ---- operator sugar ----

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return mul(a, reciprocal(b)); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

// max(x, c) as relu(x - c) + c; exact and differentiable a.e.
inline Tensor clamp_min(const Tensor& x, double c) {
    return add_scalar(relu(add_scalar(x, -c)), c);
}

}  // namespace plenopt
