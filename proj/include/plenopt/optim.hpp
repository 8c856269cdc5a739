// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "plenopt/tensor.hpp"

namespace plenopt {

// Box-Muller over the raw engine output; bit-reproducible across platforms,
// unlike std::normal_distribution.
inline double normal_sample(std::mt19937_64& rng) {
    const double u1 = (static_cast<double>(rng() >> 11) + 1.0) * 0x1.0p-53;  // (0,1]
    const double u2 = static_cast<double>(rng() >> 11) * 0x1.0p-53;          // [0,1)
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

inline double uniform_sample(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;  // [0,1)
}

// He-normal initialization: i.i.d. N(0, 2/fan_in).
inline Tensor kaiming_init(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
    if (fan_in == 0) throw std::invalid_argument("kaiming_init: fan_in must be >= 1");
    const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.mutable_values()) v = stddev * normal_sample(rng);
    t.set_requires_grad(true);
    return t;
}

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Adam with bias correction. Moments and the step counter are tracked per
// parameter tensor, so stepping a subset (schedule windows) leaves the
// other parameters' state untouched.
class Adam {
public:
    struct Slot {
        std::vector<double> m, v;
        std::int64_t t = 0;
    };

    explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

    std::size_t add_param(Tensor p) {
        slots_.push_back(Slot{std::vector<double>(p.size(), 0.0),
                              std::vector<double>(p.size(), 0.0), 0});
        params_.push_back(std::move(p));
        return params_.size() - 1;
    }

    void add_params(const std::vector<Tensor>& ps) {
        for (const Tensor& p : ps) add_param(p);
    }

    std::size_t num_params() const { return params_.size(); }
    const std::vector<Tensor>& params() const { return params_; }
    Slot& slot(std::size_t i) { return slots_[i]; }
    const Slot& slot(std::size_t i) const { return slots_[i]; }
    const AdamConfig& config() const { return cfg_; }

    void step(double lr) {
        for (std::size_t i = 0; i < params_.size(); ++i) step_one(i, lr);
    }

    void step_subset(double lr, std::span<const std::size_t> indices) {
        for (std::size_t i : indices) step_one(i, lr);
    }

    void zero_grad() {
        for (Tensor& p : params_) p.zero_grad();
    }

private:
    void step_one(std::size_t i, double lr) {
        Tensor& p = params_[i];
        Slot& s = slots_[i];
        if (!p.has_grad()) p.zero_grad();  // untouched parameter: zero gradient
        auto g = p.grad();
        auto& v = p.mutable_values();
        s.t += 1;
        const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(s.t));
        const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(s.t));
        for (std::size_t k = 0; k < v.size(); ++k) {
            s.m[k] = cfg_.beta1 * s.m[k] + (1.0 - cfg_.beta1) * g[k];
            s.v[k] = cfg_.beta2 * s.v[k] + (1.0 - cfg_.beta2) * g[k] * g[k];
            const double mhat = s.m[k] / c1;
            const double vhat = s.v[k] / c2;
            v[k] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }

    AdamConfig cfg_;
    std::vector<Tensor> params_;
    std::vector<Slot> slots_;
};

// Central-difference verification of reverse-mode gradients.
// f must rebuild its computation from the current parameter values on every
// call and return a scalar loss. Returns the max over all checked entries of
//   |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
// `stride` checks every stride-th entry of each parameter (1 = all).
inline double gradient_check(const std::function<Tensor()>& f, const std::vector<Tensor>& params,
                             double h = 1e-5, std::size_t stride = 1) {
    if (h <= 0.0) throw std::invalid_argument("gradient_check: h must be positive");
    std::vector<std::vector<double>> analytic(params.size());
    {
        for (const Tensor& p : params) const_cast<Tensor&>(p).zero_grad();
        Tape tape;
        Tensor loss = f();
        tape.backward(loss);
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto g = params[i].grad();
            analytic[i].assign(g.begin(), g.end());
        }
    }
    double max_rel = 0.0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor p = params[i];
        auto& v = p.mutable_values();
        for (std::size_t k = 0; k < v.size(); k += stride) {
            const double saved = v[k];
            v[k] = saved + h;
            const double fp = f().item();
            v[k] = saved - h;
            const double fm = f().item();
            v[k] = saved;
            if (!std::isfinite(fp) || !std::isfinite(fm))
                throw std::runtime_error("gradient_check: non-finite value at parameter " +
                                         std::to_string(i) + " entry " + std::to_string(k));
            const double numeric = (fp - fm) / (2.0 * h);
            const double a = analytic[i][k];
            const double rel =
                std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
            if (rel > max_rel) max_rel = rel;
        }
    }
    return max_rel;
}

}  // namespace plenopt
