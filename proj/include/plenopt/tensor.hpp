// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace plenopt {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
}

namespace detail {

inline std::size_t numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

// Dense value/gradient storage shared by all handles to one tensor.
struct TensorImpl {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;  // allocated lazily, same length as values
    bool requires_grad = false;
    bool tracked = false;  // set while the tensor participates in an active tape

    void ensure_grad() {
        if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
    }
    bool wants_grad() const { return requires_grad || tracked; }
};

}  // namespace detail

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape) {
        Tensor t;
        t.impl_ = std::make_shared<detail::TensorImpl>();
        t.impl_->shape = std::move(shape);
        t.impl_->values.assign(detail::numel(t.impl_->shape), 0.0);
        return t;
    }

    static Tensor full(Shape shape, double v) {
        Tensor t = zeros(std::move(shape));
        for (double& x : t.impl_->values) x = v;
        return t;
    }

    static Tensor scalar(double v) { return full({1}, v); }

    static Tensor from_values(Shape shape, std::vector<double> v) {
        if (detail::numel(shape) != v.size())
            throw std::invalid_argument("Tensor: " + shape_str(shape) + " does not hold " +
                                        std::to_string(v.size()) + " values");
        Tensor t;
        t.impl_ = std::make_shared<detail::TensorImpl>();
        t.impl_->shape = std::move(shape);
        t.impl_->values = std::move(v);
        return t;
    }

    // Learnable parameter: participates in backward and receives gradients.
    static Tensor param(Shape shape, std::vector<double> v) {
        Tensor t = from_values(std::move(shape), std::move(v));
        t.impl_->requires_grad = true;
        return t;
    }

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    std::size_t rank() const { return impl_->shape.size(); }
    std::size_t size() const { return impl_->values.size(); }

    std::span<const double> values() const { return impl_->values; }
    std::vector<double>& mutable_values() { return impl_->values; }

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool rg) { impl_->requires_grad = rg; }

    bool has_grad() const { return !impl_->grad.empty(); }
    std::span<const double> grad() const {
        impl_->ensure_grad();
        return impl_->grad;
    }
    void zero_grad() { impl_->grad.assign(impl_->values.size(), 0.0); }

    double item() const {
        if (size() != 1)
            throw std::invalid_argument("item: tensor " + shape_str(shape()) + " is not scalar");
        return impl_->values[0];
    }
    double at(std::size_t i) const { return impl_->values.at(i); }

    std::shared_ptr<detail::TensorImpl> impl() const { return impl_; }

    // Identity comparison (same storage), used for optimizer disjointness checks.
    bool same_storage(const Tensor& o) const { return impl_ == o.impl_; }

private:
    std::shared_ptr<detail::TensorImpl> impl_;
};

// Reverse-mode tape. Operations executed under an active tape record a
// closure that propagates output gradients to input gradients; backward
// replays them once, in reverse recording order.
class Tape {
public:
    Tape() : prev_(active_instance()) { active_instance() = this; }
    ~Tape() { active_instance() = prev_; }
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* active() { return active_instance(); }

    void record(std::function<void()> backward_fn) { ops_.push_back(std::move(backward_fn)); }

    std::size_t size() const { return ops_.size(); }

    // Seeds d(loss)/d(loss) = 1 and runs every recorded op once, in reverse.
    // Gradients accumulate additively into whatever the grad slots held.
    void backward(const Tensor& loss) {
        if (loss.size() != 1)
            throw std::invalid_argument("backward: loss must be scalar, got " +
                                        shape_str(loss.shape()));
        auto impl = loss.impl();
        impl->ensure_grad();
        impl->grad[0] += 1.0;
        for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
    }

private:
    static Tape*& active_instance() {
        static thread_local Tape* active = nullptr;
        return active;
    }
    Tape* prev_;
    std::vector<std::function<void()>> ops_;
};

}  // namespace plenopt
