// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "plenopt/ops.hpp"
#include "plenopt/optim.hpp"
#include "plenopt/tensor.hpp"

namespace plenopt {

// Learnable grid encoding: n frequency bands, each a learnable projection
// W_k of shape {input_dim, d_k}, plus one pre-sigmoid gate per band. The
// gates realize the learned coarse-to-fine schedule: bands start open or
// closed and the photometric loss decides how they evolve.
struct EncodingParams {
    std::vector<Tensor> weights;  // per band, {input_dim, freqs_per_band}
    Tensor gates;                 // {n}, pre-sigmoid
    std::size_t input_dim = 0;

    std::size_t bands() const { return weights.size(); }
    std::size_t freqs_per_band() const { return weights.empty() ? 0 : weights[0].shape()[1]; }
    std::size_t total_freqs() const {
        std::size_t s = 0;
        for (const Tensor& w : weights) s += w.shape()[1];
        return s;
    }
    // encode_grid output width: 2 * total (positional) + 2 * total (frequency)
    std::size_t encoded_dim() const { return 4 * total_freqs(); }

    // Rows cycle through the coordinate axes plus small noise, so the start
    // point matches a standard axis-aligned encoding while staying learnable.
    static EncodingParams create(std::size_t input_dim, std::size_t bands,
                                 std::size_t freqs_per_band, std::mt19937_64& rng,
                                 double noise_std = 0.05) {
        if (bands == 0) throw std::invalid_argument("EncodingParams: need at least one band");
        EncodingParams p;
        p.input_dim = input_dim;
        p.weights.reserve(bands);
        for (std::size_t k = 0; k < bands; ++k) {
            Tensor w = Tensor::zeros({input_dim, freqs_per_band});
            auto& v = w.mutable_values();
            for (std::size_t j = 0; j < freqs_per_band; ++j) {
                const std::size_t axis = j % input_dim;
                for (std::size_t i = 0; i < input_dim; ++i)
                    v[i * freqs_per_band + j] =
                        (i == axis ? 1.0 : 0.0) + noise_std * normal_sample(rng);
            }
            w.set_requires_grad(true);
            p.weights.push_back(std::move(w));
        }
        p.gates = Tensor::zeros({bands});
        p.gates.set_requires_grad(true);
        return p;
    }
};

// Gates open (+4 pre-sigmoid, sigma ~ 0.982) for the first warm_bands bands,
// closed (-4, sigma ~ 0.018) for the rest.
inline void init_gates(EncodingParams& params, std::size_t warm_bands) {
    if (warm_bands > params.bands())
        throw std::invalid_argument("init_gates: warm_bands exceeds band count");
    auto& g = params.gates.mutable_values();
    for (std::size_t k = 0; k < g.size(); ++k) g[k] = k < warm_bands ? 4.0 : -4.0;
}

// [sin(W1 p), cos(W1 p), ..., sin(Wn p), cos(Wn p)] over a {P, D} batch.
inline Tensor encode_position(const Tensor& points, const EncodingParams& params) {
    std::vector<Tensor> parts;
    parts.reserve(2 * params.bands());
    for (const Tensor& w : params.weights) {
        Tensor proj = matmul(points, w);
        parts.push_back(sin(proj));
        parts.push_back(cos(proj));
    }
    return concat(parts, 1);
}

// Same pairs with band k scaled by 2^(k-1) * pi.
inline Tensor encode_frequency(const Tensor& points, const EncodingParams& params) {
    std::vector<Tensor> parts;
    parts.reserve(2 * params.bands());
    for (std::size_t k = 0; k < params.bands(); ++k) {
        Tensor proj = scale(matmul(points, params.weights[k]), std::ldexp(M_PI, static_cast<int>(k)));
        parts.push_back(sin(proj));
        parts.push_back(cos(proj));
    }
    return concat(parts, 1);
}

// Concatenation [f_pos(p), f_freq(p)] with sigma(gate_k) multiplying band k's
// block in both halves.
inline Tensor encode_grid(const Tensor& points, const EncodingParams& params) {
    Tensor g = sigmoid(params.gates);
    std::vector<Tensor> pos, freq;
    pos.reserve(params.bands());
    freq.reserve(params.bands());
    for (std::size_t k = 0; k < params.bands(); ++k) {
        Tensor gk = slice(g, 0, k, 1);  // {1}
        Tensor proj = matmul(points, params.weights[k]);
        pos.push_back(mul(concat({sin(proj), cos(proj)}, 1), gk));
        Tensor fproj = scale(proj, std::ldexp(M_PI, static_cast<int>(k)));
        freq.push_back(mul(concat({sin(fproj), cos(fproj)}, 1), gk));
    }
    std::vector<Tensor> all = pos;
    all.insert(all.end(), freq.begin(), freq.end());
    return concat(all, 1);
}

}  // namespace plenopt
