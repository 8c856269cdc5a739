// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "plenopt/encoding.hpp"
#include "plenopt/geometry.hpp"
#include "plenopt/ops.hpp"
#include "plenopt/optim.hpp"
#include "plenopt/tensor.hpp"

namespace plenopt {

// Fully connected stack with ReLU between layers; the last layer is linear.
struct Mlp {
    std::vector<Tensor> weights;  // {in, out}
    std::vector<Tensor> biases;   // {out}

    static Mlp create(const std::vector<std::size_t>& dims, std::mt19937_64& rng) {
        if (dims.size() < 2) throw std::invalid_argument("Mlp: need at least one layer");
        Mlp m;
        for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
            m.weights.push_back(kaiming_init({dims[i], dims[i + 1]}, dims[i], rng));
            Tensor b = Tensor::zeros({dims[i + 1]});
            b.set_requires_grad(true);
            m.biases.push_back(std::move(b));
        }
        return m;
    }

    Tensor forward(const Tensor& x) const {
        Tensor h = x;
        for (std::size_t i = 0; i < weights.size(); ++i) {
            h = add(matmul(h, weights[i]), biases[i]);
            if (i + 1 < weights.size()) h = relu(h);
        }
        return h;
    }

    void collect(std::vector<Tensor>& out) const {
        for (const Tensor& w : weights) out.push_back(w);
        for (const Tensor& b : biases) out.push_back(b);
    }
};

// Density, color and (dynamic branch) blend for a batch of samples.
struct FieldSampleBatch {
    Tensor sigma;  // {M,1}, >= 0
    Tensor rgb;    // {M,3}, in (0,1)
    Tensor blend;  // {M,1}, dynamic branch only
};

// Static branch: density network maps encoded position to raw density plus a
// feature vector; the color network consumes the feature and the encoded view
// direction. Density is independent of direction by construction.
struct StaticField {
    EncodingParams pos_enc;  // input_dim 3
    EncodingParams dir_enc;  // input_dim 3
    Mlp density;             // enc(pos) -> [sigma_raw, feature]
    Mlp color;               // [feature, enc(dir)] -> rgb_raw
    std::size_t feature_dim = 0;

    static StaticField create(std::size_t hidden, std::size_t density_depth,
                              std::size_t color_depth, std::size_t pos_bands,
                              std::size_t pos_freqs, std::size_t dir_bands,
                              std::size_t dir_freqs, std::size_t warm_bands,
                              std::mt19937_64& rng) {
        StaticField f;
        f.pos_enc = EncodingParams::create(3, pos_bands, pos_freqs, rng);
        f.dir_enc = EncodingParams::create(3, dir_bands, dir_freqs, rng);
        init_gates(f.pos_enc, warm_bands);
        init_gates(f.dir_enc, dir_bands);  // direction bands start open
        f.feature_dim = hidden;
        std::vector<std::size_t> ddims(density_depth + 1, hidden);
        ddims.front() = f.pos_enc.encoded_dim();
        ddims.back() = hidden + 1;
        f.density = Mlp::create(ddims, rng);
        std::vector<std::size_t> cdims(color_depth + 1, hidden);
        cdims.front() = hidden + f.dir_enc.encoded_dim();
        cdims.back() = 3;
        f.color = Mlp::create(cdims, rng);
        return f;
    }

    void collect(std::vector<Tensor>& out) const {
        for (const Tensor& w : pos_enc.weights) out.push_back(w);
        for (const Tensor& w : dir_enc.weights) out.push_back(w);
        density.collect(out);
        color.collect(out);
    }
};

inline FieldSampleBatch eval_static(const Tensor& points, const Tensor& dirs,
                                    const StaticField& field) {
    const std::size_t m = points.shape()[0];
    Tensor h = field.density.forward(encode_grid(points, field.pos_enc));
    FieldSampleBatch s;
    s.sigma = softplus(slice(h, 1, 0, 1));
    Tensor feature = slice(h, 1, 1, field.feature_dim);
    Tensor cin = concat({feature, encode_grid(dirs, field.dir_enc)}, 1);
    s.rgb = sigmoid(field.color.forward(cin));
    s.blend = Tensor::zeros({m, 1});
    return s;
}

// Dynamic branch: a deformation network bends each sample to x' = x + dx(x,t),
// then time-conditioned density/color networks evaluate at x'. The density
// network also emits the per-sample blend logit used by fuse().
struct DynamicField {
    EncodingParams pos_enc;
    EncodingParams dir_enc;
    EncodingParams time_enc;  // input_dim 1
    Mlp deform;               // [enc(pos), enc(t)] -> dx
    Mlp density;              // [enc(x'), enc(t)] -> [sigma_raw, blend_raw, feature]
    Mlp color;                // [feature, enc(dir)] -> rgb_raw
    std::size_t feature_dim = 0;

    static DynamicField create(std::size_t hidden, std::size_t density_depth,
                               std::size_t color_depth, std::size_t deform_depth,
                               std::size_t pos_bands, std::size_t pos_freqs,
                               std::size_t dir_bands, std::size_t dir_freqs,
                               std::size_t time_bands, std::size_t warm_bands,
                               std::mt19937_64& rng) {
        DynamicField f;
        f.pos_enc = EncodingParams::create(3, pos_bands, pos_freqs, rng);
        f.dir_enc = EncodingParams::create(3, dir_bands, dir_freqs, rng);
        f.time_enc = EncodingParams::create(1, time_bands, 2, rng);
        init_gates(f.pos_enc, warm_bands);
        init_gates(f.dir_enc, dir_bands);
        init_gates(f.time_enc, time_bands);
        f.feature_dim = hidden;
        std::vector<std::size_t> fdims(deform_depth + 1, hidden);
        fdims.front() = f.pos_enc.encoded_dim() + f.time_enc.encoded_dim();
        fdims.back() = 3;
        f.deform = Mlp::create(fdims, rng);
        // start with a near-identity warp so early training stays stable
        for (auto& v : f.deform.weights.back().mutable_values()) v *= 1e-2;
        std::vector<std::size_t> ddims(density_depth + 1, hidden);
        ddims.front() = f.pos_enc.encoded_dim() + f.time_enc.encoded_dim();
        ddims.back() = hidden + 2;
        f.density = Mlp::create(ddims, rng);
        std::vector<std::size_t> cdims(color_depth + 1, hidden);
        cdims.front() = hidden + f.dir_enc.encoded_dim();
        cdims.back() = 3;
        f.color = Mlp::create(cdims, rng);
        return f;
    }

    void collect(std::vector<Tensor>& out) const {
        for (const Tensor& w : pos_enc.weights) out.push_back(w);
        for (const Tensor& w : dir_enc.weights) out.push_back(w);
        for (const Tensor& w : time_enc.weights) out.push_back(w);
        deform.collect(out);
        density.collect(out);
        color.collect(out);
    }
};

// Deformation output for inspection/tests: dx(x, t).
inline Tensor eval_deformation(const Tensor& points, double time, const DynamicField& field) {
    const std::size_t m = points.shape()[0];
    Tensor t_in = Tensor::full({1, 1}, 2.0 * time - 1.0);  // map [0,1] -> [-1,1]
    Tensor t_enc = broadcast_to(encode_grid(t_in, field.time_enc),
                                {m, field.time_enc.encoded_dim()});
    Tensor din = concat({encode_grid(points, field.pos_enc), t_enc}, 1);
    return field.deform.forward(din);
}

inline FieldSampleBatch eval_dynamic(const Tensor& points, const Tensor& dirs, double time,
                                     const DynamicField& field) {
    if (time < 0.0 || time > 1.0)
        throw std::invalid_argument("eval_dynamic: time must lie in [0,1]");
    const std::size_t m = points.shape()[0];
    Tensor warped = add(points, eval_deformation(points, time, field));
    Tensor t_in = Tensor::full({1, 1}, 2.0 * time - 1.0);
    Tensor t_enc = broadcast_to(encode_grid(t_in, field.time_enc),
                                {m, field.time_enc.encoded_dim()});
    Tensor h = field.density.forward(concat({encode_grid(warped, field.pos_enc), t_enc}, 1));
    FieldSampleBatch s;
    s.sigma = softplus(slice(h, 1, 0, 1));
    s.blend = sigmoid(slice(h, 1, 1, 1));
    Tensor feature = slice(h, 1, 2, field.feature_dim);
    Tensor cin = concat({feature, encode_grid(dirs, field.dir_enc)}, 1);
    s.rgb = sigmoid(field.color.forward(cin));
    return s;
}

// Density-weighted convex blend of the two branches:
//   sigma = (1-b) sigma_s + b sigma_d
//   rgb   = ((1-b) sigma_s rgb_s + b sigma_d rgb_d) / max(sigma, 1e-9)
inline FieldSampleBatch fuse(const FieldSampleBatch& stat, const FieldSampleBatch& dyn) {
    const Tensor& b = dyn.blend;
    Tensor one_minus_b = add_scalar(neg(b), 1.0);
    Tensor ws = mul(one_minus_b, stat.sigma);  // {M,1}
    Tensor wd = mul(b, dyn.sigma);
    FieldSampleBatch out;
    out.sigma = add(ws, wd);
    Tensor numer = add(mul(ws, stat.rgb), mul(wd, dyn.rgb));
    out.rgb = mul(numer, reciprocal(clamp_min(out.sigma, 1e-9)));
    out.blend = b;
    return out;
}

// Sampler signature consumed by the renderer: points {M,3}, dirs {M,3} and a
// time stamp map to densities and colors.
using FieldFn = std::function<FieldSampleBatch(const Tensor&, const Tensor&, double)>;

// Scene-box normalization applied before any neural field evaluation.
struct SceneBox {
    Vec3 lo = {-1, -1, -1};
    Vec3 hi = {1, 1, 1};

    Vec3 center() const {
        return {(lo[0] + hi[0]) / 2, (lo[1] + hi[1]) / 2, (lo[2] + hi[2]) / 2};
    }
    double half_extent() const {
        double h = 0.0;
        for (int i = 0; i < 3; ++i) h = std::max(h, (hi[static_cast<std::size_t>(i)] - lo[static_cast<std::size_t>(i)]) / 2.0);
        return h > 0.0 ? h : 1.0;
    }
};

inline Tensor normalize_points(const Tensor& points, const SceneBox& box) {
    const Vec3 c = box.center();
    Tensor center = Tensor::from_values({1, 3}, {c[0], c[1], c[2]});
    return scale(sub(points, center), 1.0 / box.half_extent());
}

// The trainable radiance model: a static branch, an optional dynamic branch,
// and the scene box they are normalized against.
struct RadianceModel {
    StaticField static_field;
    std::optional<DynamicField> dynamic_field;
    SceneBox box;

    bool is_dynamic() const { return dynamic_field.has_value(); }

    // force_static: evaluate the static branch only (exact b = 0 semantics).
    FieldFn field_fn(bool force_static = false) const {
        const RadianceModel* self = this;
        return [self, force_static](const Tensor& pts, const Tensor& dirs, double time) {
            Tensor norm_pts = normalize_points(pts, self->box);
            FieldSampleBatch stat = eval_static(norm_pts, dirs, self->static_field);
            if (force_static || !self->is_dynamic()) return stat;
            FieldSampleBatch dyn = eval_dynamic(norm_pts, dirs, time, *self->dynamic_field);
            return fuse(stat, dyn);
        };
    }
};

}  // namespace plenopt
