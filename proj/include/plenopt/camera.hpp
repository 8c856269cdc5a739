// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "plenopt/geometry.hpp"
#include "plenopt/ops.hpp"
#include "plenopt/optim.hpp"
#include "plenopt/tensor.hpp"

namespace plenopt {

// ---- plain rotation math (import/export, perturbation, metrics) ----

inline Mat3 mat3_identity() { return {1, 0, 0, 0, 1, 0, 0, 0, 1}; }

inline Mat3 mat3_mul(const Mat3& a, const Mat3& b) {
    Mat3 c{};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            for (int k = 0; k < 3; ++k) c[i * 3 + j] += a[i * 3 + k] * b[k * 3 + j];
    return c;
}

inline Vec3 mat3_apply(const Mat3& m, const Vec3& v) {
    return {m[0] * v[0] + m[1] * v[1] + m[2] * v[2], m[3] * v[0] + m[4] * v[1] + m[5] * v[2],
            m[6] * v[0] + m[7] * v[1] + m[8] * v[2]};
}

inline Mat3 mat3_transpose(const Mat3& m) {
    return {m[0], m[3], m[6], m[1], m[4], m[7], m[2], m[5], m[8]};
}

inline Mat3 skew(const Vec3& w) {
    return {0, -w[2], w[1], w[2], 0, -w[0], -w[1], w[0], 0};
}

namespace detail {

// Smooth Rodrigues coefficients and their radial derivatives:
//   R = I + a(t) K + b(t) K^2,  K = [w]x, t = |w|
//   d a / d w_i = da(t) * w_i,  d b / d w_i = db(t) * w_i
struct RodriguesCoeffs {
    double a, b, da, db;
};

inline RodriguesCoeffs rodrigues_coeffs(double theta) {
    RodriguesCoeffs c;
    const double t2 = theta * theta;
    if (theta < 1e-4) {
        c.a = 1.0 - t2 / 6.0 + t2 * t2 / 120.0;
        c.b = 0.5 - t2 / 24.0 + t2 * t2 / 720.0;
        c.da = -1.0 / 3.0 + t2 / 30.0;
        c.db = -1.0 / 12.0 + t2 / 180.0;
    } else {
        const double s = std::sin(theta), co = std::cos(theta);
        const double half = std::sin(0.5 * theta);
        c.a = s / theta;
        c.b = 2.0 * half * half / t2;
        c.da = (theta * co - s) / (t2 * theta);
        c.db = (theta * s - 2.0 * (1.0 - co)) / (t2 * t2);
    }
    return c;
}

}  // namespace detail

// Rodrigues formula on plain values.
inline Mat3 so3_exp_mat(const Vec3& w) {
    const double theta = std::sqrt(w[0] * w[0] + w[1] * w[1] + w[2] * w[2]);
    const auto c = detail::rodrigues_coeffs(theta);
    const Mat3 k = skew(w);
    const Mat3 k2 = mat3_mul(k, k);
    Mat3 r = mat3_identity();
    for (int i = 0; i < 9; ++i) r[i] += c.a * k[i] + c.b * k2[i];
    return r;
}

// Log map via quaternion extraction; robust for angles up to and including pi.
inline Vec3 so3_log(const Mat3& m) {
    const double tr = m[0] + m[4] + m[8];
    double qw, qx, qy, qz;
    if (tr > 0.0) {
        double s = std::sqrt(tr + 1.0) * 2.0;
        qw = 0.25 * s;
        qx = (m[7] - m[5]) / s;
        qy = (m[2] - m[6]) / s;
        qz = (m[3] - m[1]) / s;
    } else if (m[0] > m[4] && m[0] > m[8]) {
        double s = std::sqrt(1.0 + m[0] - m[4] - m[8]) * 2.0;
        qw = (m[7] - m[5]) / s;
        qx = 0.25 * s;
        qy = (m[1] + m[3]) / s;
        qz = (m[2] + m[6]) / s;
    } else if (m[4] > m[8]) {
        double s = std::sqrt(1.0 + m[4] - m[0] - m[8]) * 2.0;
        qw = (m[2] - m[6]) / s;
        qx = (m[1] + m[3]) / s;
        qy = 0.25 * s;
        qz = (m[5] + m[7]) / s;
    } else {
        double s = std::sqrt(1.0 + m[8] - m[0] - m[4]) * 2.0;
        qw = (m[3] - m[1]) / s;
        qx = (m[2] + m[6]) / s;
        qy = (m[5] + m[7]) / s;
        qz = 0.25 * s;
    }
    if (qw < 0.0) {
        qw = -qw;
        qx = -qx;
        qy = -qy;
        qz = -qz;
    }
    const double nv = std::sqrt(qx * qx + qy * qy + qz * qz);
    double factor;
    if (nv < 1e-9) {
        factor = 2.0 / qw * (1.0 - nv * nv / (3.0 * qw * qw));
    } else {
        factor = 2.0 * std::atan2(nv, qw) / nv;
    }
    return {factor * qx, factor * qy, factor * qz};
}

// Axis-angle equivalent to the elemental product R_x(tx) R_y(ty) R_z(tz).
inline Vec3 euler_to_axis_angle(double tx, double ty, double tz) {
    const double cx = std::cos(tx), sx = std::sin(tx);
    const double cy = std::cos(ty), sy = std::sin(ty);
    const double cz = std::cos(tz), sz = std::sin(tz);
    const Mat3 rx = {1, 0, 0, 0, cx, -sx, 0, sx, cx};
    const Mat3 ry = {cy, 0, sy, 0, 1, 0, -sy, 0, cy};
    const Mat3 rz = {cz, -sz, 0, sz, cz, 0, 0, 0, 1};
    return so3_log(mat3_mul(rx, mat3_mul(ry, rz)));
}

// Wraps |w| into [0, pi] (flipping the axis as needed); identity for w = 0.
inline Vec3 canonicalize_axis_angle(const Vec3& w) {
    double theta = std::sqrt(w[0] * w[0] + w[1] * w[1] + w[2] * w[2]);
    if (theta <= M_PI || theta == 0.0) return w;
    double wrapped = std::fmod(theta, 2.0 * M_PI);
    if (wrapped > M_PI) wrapped -= 2.0 * M_PI;  // in (-pi, pi]
    const double f = wrapped / theta;
    return {w[0] * f, w[1] * f, w[2] * f};
}

inline double geodesic_deg(const Mat3& a, const Mat3& b) {
    const Mat3 d = mat3_mul(mat3_transpose(a), b);
    const double c = std::clamp((d[0] + d[4] + d[8] - 1.0) / 2.0, -1.0, 1.0);
    return std::acos(c) * 180.0 / M_PI;
}

// ---- differentiable SO(3) exponential ----

// {3} axis-angle -> {3,3} rotation. Backward uses the closed-form derivative
// of the Rodrigues coefficients, with the same series switch as the forward.
inline Tensor so3_exp(const Tensor& w) {
    if (w.size() != 3)
        throw std::invalid_argument("so3_exp: expected 3 entries, got " + shape_str(w.shape()));
    const Vec3 wv = {w.at(0), w.at(1), w.at(2)};
    Tensor out = Tensor::zeros({3, 3});
    {
        const Mat3 r = so3_exp_mat(wv);
        std::copy(r.begin(), r.end(), out.mutable_values().begin());
    }
    if (Tape* tape = Tape::active(); tape && detail::should_track(w)) {
        detail::mark_output(out);
        auto wi = w.impl();
        auto oi = out.impl();
        tape->record([wi, oi] {
            if (oi->grad.empty()) return;
            wi->ensure_grad();
            const Vec3 wv = {wi->values[0], wi->values[1], wi->values[2]};
            const double theta = std::sqrt(wv[0] * wv[0] + wv[1] * wv[1] + wv[2] * wv[2]);
            const auto c = detail::rodrigues_coeffs(theta);
            const Mat3 k = skew(wv);
            const Mat3 k2 = mat3_mul(k, k);
            for (int i = 0; i < 3; ++i) {
                Vec3 e{0, 0, 0};
                e[static_cast<std::size_t>(i)] = 1.0;
                const Mat3 ei = skew(e);
                const Mat3 eik = mat3_mul(ei, k);
                const Mat3 kei = mat3_mul(k, ei);
                double acc = 0.0;
                for (int j = 0; j < 9; ++j) {
                    const double drdw = c.da * wv[static_cast<std::size_t>(i)] * k[j] + c.a * ei[j] +
                                        c.db * wv[static_cast<std::size_t>(i)] * k2[j] +
                                        c.b * (eik[j] + kei[j]);
                    acc += oi->grad[static_cast<std::size_t>(j)] * drdw;
                }
                wi->grad[static_cast<std::size_t>(i)] += acc;
            }
        });
    }
    return out;
}

// ---- camera parameters ----

// Pinhole intrinsics; each entry is a scalar tensor so that the focal
// optimizer can own (fx, fy, cx, cy) while skew stays frozen by default.
struct IntrinsicParams {
    Tensor fx, fy, cx, cy, skew;

    static IntrinsicParams create(double fx, double fy, double cx, double cy, double skew = 0.0,
                                  bool learnable = true, bool learn_skew = false) {
        IntrinsicParams p;
        p.fx = Tensor::from_values({1}, {fx});
        p.fy = Tensor::from_values({1}, {fy});
        p.cx = Tensor::from_values({1}, {cx});
        p.cy = Tensor::from_values({1}, {cy});
        p.skew = Tensor::from_values({1}, {skew});
        p.fx.set_requires_grad(learnable);
        p.fy.set_requires_grad(learnable);
        p.cx.set_requires_grad(learnable);
        p.cy.set_requires_grad(learnable);
        p.skew.set_requires_grad(learn_skew);
        return p;
    }

    IntrinsicParams clone() const {
        IntrinsicParams p;
        auto copy = [](const Tensor& t) {
            Tensor c = Tensor::from_values(t.shape(), {t.values().begin(), t.values().end()});
            c.set_requires_grad(t.requires_grad());
            return c;
        };
        p.fx = copy(fx);
        p.fy = copy(fy);
        p.cx = copy(cx);
        p.cy = copy(cy);
        p.skew = copy(skew);
        return p;
    }
};

// [[fx, s, cx], [0, fy, cy], [0, 0, 1]]
inline Tensor intrinsics_matrix(const IntrinsicParams& p) {
    Tensor zero = Tensor::zeros({1});
    Tensor one = Tensor::scalar(1.0);
    Tensor row0 = concat({p.fx, p.skew, p.cx}, 0);
    Tensor row1 = concat({zero, p.fy, p.cy}, 0);
    Tensor row2 = concat({zero, zero, one}, 0);
    return reshape(concat({row0, row1, row2}, 0), {3, 3});
}

// World-from-camera pose: rotation as so(3) axis-angle, translation = camera
// center in world units.
struct ExtrinsicParams {
    Tensor rotation;     // {3}
    Tensor translation;  // {3}

    static ExtrinsicParams create(const Vec3& axis_angle, const Vec3& translation,
                                  bool learnable = true) {
        ExtrinsicParams e;
        e.rotation = Tensor::from_values({3}, {axis_angle[0], axis_angle[1], axis_angle[2]});
        e.translation = Tensor::from_values({3}, {translation[0], translation[1], translation[2]});
        e.rotation.set_requires_grad(learnable);
        e.translation.set_requires_grad(learnable);
        return e;
    }

    Vec3 rotation_vec() const { return {rotation.at(0), rotation.at(1), rotation.at(2)}; }
    Vec3 translation_vec() const {
        return {translation.at(0), translation.at(1), translation.at(2)};
    }
    Mat3 rotation_mat() const { return so3_exp_mat(rotation_vec()); }

    void canonicalize() {
        const Vec3 c = canonicalize_axis_angle(rotation_vec());
        auto& v = rotation.mutable_values();
        v[0] = c[0];
        v[1] = c[1];
        v[2] = c[2];
    }

    ExtrinsicParams clone() const {
        ExtrinsicParams e = create(rotation_vec(), translation_vec(), false);
        e.rotation.set_requires_grad(rotation.requires_grad());
        e.translation.set_requires_grad(translation.requires_grad());
        return e;
    }
};

struct CameraParams {
    IntrinsicParams intr;
    ExtrinsicParams extr;
    int width = 0;
    int height = 0;

    CameraParams clone() const {
        CameraParams c;
        c.intr = intr.clone();
        c.extr = extr.clone();
        c.width = width;
        c.height = height;
        return c;
    }
};

// One camera per view; intrinsics may alias the same tensors across views
// (shared-intrinsics mode for monocular capture).
inline std::vector<CameraParams> default_cameras(std::size_t n_views, int width, int height,
                                                 bool shared_intrinsics = false,
                                                 bool learn_skew = false) {
    if (n_views == 0) throw std::invalid_argument("default_cameras: n_views must be >= 1");
    std::vector<CameraParams> cams;
    cams.reserve(n_views);
    IntrinsicParams shared;
    if (shared_intrinsics)
        shared = IntrinsicParams::create(width, width, width / 2.0, height / 2.0, 0.0, true,
                                         learn_skew);
    for (std::size_t i = 0; i < n_views; ++i) {
        CameraParams c;
        c.intr = shared_intrinsics ? shared
                                   : IntrinsicParams::create(width, width, width / 2.0,
                                                             height / 2.0, 0.0, true, learn_skew);
        c.extr = ExtrinsicParams::create({0, 0, 0}, {0, 0, 0}, true);
        c.width = width;
        c.height = height;
        cams.push_back(std::move(c));
    }
    return cams;
}

// ---- ray generation ----

struct PixelCoord {
    int u = 0;
    int v = 0;
};

struct RayBatch {
    Tensor origins;     // {P,3}
    Tensor directions;  // {P,3}, unit rows
    std::vector<PixelCoord> pixels;
    int view = 0;
    double tnear = 0.0;
    double tfar = 0.0;
    double time = 0.0;
};

// Differentiable pinhole back-projection. Camera looks down -z in its own
// frame; pixel centers sit at half-integer offsets.
inline RayBatch generate_rays(const CameraParams& cam, std::span<const PixelCoord> pixels,
                              double near, double far, double time) {
    const std::size_t n = pixels.size();
    RayBatch batch;
    batch.pixels.assign(pixels.begin(), pixels.end());
    batch.tnear = near;
    batch.tfar = far;
    batch.time = time;
    if (n == 0) {
        batch.origins = Tensor::zeros({0, 3});
        batch.directions = Tensor::zeros({0, 3});
        return batch;
    }
    Tensor u5 = Tensor::zeros({n, 1});
    Tensor v5 = Tensor::zeros({n, 1});
    for (std::size_t i = 0; i < n; ++i) {
        u5.mutable_values()[i] = pixels[i].u + 0.5;
        v5.mutable_values()[i] = pixels[i].v + 0.5;
    }
    // y_img = (v + 0.5 - cy) / fy;  x = (u + 0.5 - cx - s*y_img) / fx
    Tensor yimg = mul(sub(v5, cam.intr.cy), reciprocal(cam.intr.fy));
    Tensor ximg = mul(sub(sub(u5, cam.intr.cx), mul(cam.intr.skew, yimg)),
                      reciprocal(cam.intr.fx));
    Tensor dir_cam = concat({ximg, neg(yimg), Tensor::full({n, 1}, -1.0)}, 1);
    Tensor rot = so3_exp(cam.extr.rotation);
    Tensor dir_world = matmul(dir_cam, transpose(rot));
    Tensor norm = sqrt(sum_axis(mul(dir_world, dir_world), 1, true));
    batch.directions = mul(dir_world, reciprocal(norm));
    batch.origins = broadcast_to(reshape(cam.extr.translation, {1, 3}), {n, 3});
    return batch;
}

// ---- perturbation for ablations ----

enum class SignPattern { kRandom, kPositive, kNegative, kAlternating };

inline SignPattern sign_pattern_from_string(const std::string& s) {
    if (s == "random") return SignPattern::kRandom;
    if (s == "plus" || s == "positive") return SignPattern::kPositive;
    if (s == "minus" || s == "negative") return SignPattern::kNegative;
    if (s == "alternating") return SignPattern::kAlternating;
    throw std::invalid_argument("unknown sign pattern: " + s);
}

struct PerturbationSpec {
    double rotation_deg = 0.0;     // exact geodesic magnitude applied to each view
    double translation_frac = 0.0;  // fraction of scene_scale
    double intrinsic_frac = 0.0;    // focal multiplied by (1 +/- frac)
    double scene_scale = 1.0;
    SignPattern sign = SignPattern::kRandom;
    std::uint64_t seed = 0;
};

namespace detail {
inline Vec3 random_unit_vec(std::mt19937_64& rng) {
    for (;;) {
        const Vec3 v = {normal_sample(rng), normal_sample(rng), normal_sample(rng)};
        const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
        if (n > 1e-12) return {v[0] / n, v[1] / n, v[2] / n};
    }
}

inline double pick_sign(SignPattern p, std::size_t view, std::mt19937_64& rng) {
    switch (p) {
        case SignPattern::kPositive: return 1.0;
        case SignPattern::kNegative: return -1.0;
        case SignPattern::kAlternating: return view % 2 == 0 ? 1.0 : -1.0;
        case SignPattern::kRandom: default: return rng() & 1 ? 1.0 : -1.0;
    }
}
}  // namespace detail

// Returns a perturbed deep copy; the input is left intact as ground truth.
inline std::vector<CameraParams> perturb_cameras(const std::vector<CameraParams>& cams,
                                                 const PerturbationSpec& spec) {
    if (spec.rotation_deg < 0 || spec.rotation_deg > 180 || spec.translation_frac < 0 ||
        spec.translation_frac > 1 || spec.intrinsic_frac < 0 || spec.intrinsic_frac > 1)
        throw std::invalid_argument("perturb_cameras: magnitudes out of range");
    std::mt19937_64 rng(spec.seed);
    std::vector<CameraParams> out;
    out.reserve(cams.size());
    for (std::size_t v = 0; v < cams.size(); ++v) {
        CameraParams c = cams[v].clone();
        if (spec.rotation_deg > 0.0) {
            const Vec3 axis = detail::random_unit_vec(rng);
            const double mag = spec.rotation_deg * M_PI / 180.0;
            const Mat3 delta = so3_exp_mat({axis[0] * mag, axis[1] * mag, axis[2] * mag});
            const Vec3 w = so3_log(mat3_mul(delta, c.extr.rotation_mat()));
            auto& rv = c.extr.rotation.mutable_values();
            rv.assign(w.begin(), w.end());
        }
        if (spec.translation_frac > 0.0) {
            const Vec3 dir = detail::random_unit_vec(rng);
            const double mag = spec.translation_frac * spec.scene_scale;
            auto& tv = c.extr.translation.mutable_values();
            for (int i = 0; i < 3; ++i) tv[static_cast<std::size_t>(i)] += mag * dir[static_cast<std::size_t>(i)];
        }
        if (spec.intrinsic_frac > 0.0) {
            const double s = detail::pick_sign(spec.sign, v, rng);
            const double factor = 1.0 + s * spec.intrinsic_frac;
            c.intr.fx.mutable_values()[0] *= factor;
            c.intr.fy.mutable_values()[0] *= factor;
        }
        out.push_back(std::move(c));
    }
    return out;
}

}  // namespace plenopt
