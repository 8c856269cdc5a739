// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "plenopt/camera.hpp"
#include "plenopt/fields.hpp"
#include "plenopt/ops.hpp"
#include "plenopt/tensor.hpp"

namespace plenopt {

// Depths and interval widths for a batch of rays sharing [near, far].
struct RaySamples {
    Tensor depths;  // {B,N}, strictly increasing per ray
    Tensor deltas;  // {B,N}, last interval runs to far
    Tensor points;  // {B*N,3}
    Tensor dirs;    // {B*N,3}
    std::size_t n_rays = 0;
    std::size_t n_samples = 0;
};

// One depth per equal-width bin: bin centers without jitter, uniform in-bin
// draws with jitter. Depths are constants on the tape; gradients flow through
// origins and directions only.
inline RaySamples stratified_samples(const RayBatch& rays, std::size_t n, std::mt19937_64& rng,
                                     bool jitter) {
    if (n == 0) throw std::invalid_argument("stratified_samples: need at least one sample");
    if (!(rays.tnear < rays.tfar))
        throw std::invalid_argument("stratified_samples: near must be below far");
    const std::size_t b = rays.pixels.size();
    RaySamples out;
    out.n_rays = b;
    out.n_samples = n;
    out.depths = Tensor::zeros({b, n});
    out.deltas = Tensor::zeros({b, n});
    const double width = (rays.tfar - rays.tnear) / static_cast<double>(n);
    auto& dv = out.depths.mutable_values();
    auto& del = out.deltas.mutable_values();
    for (std::size_t r = 0; r < b; ++r) {
        for (std::size_t k = 0; k < n; ++k) {
            const double u = jitter ? uniform_sample(rng) : 0.5;
            dv[r * n + k] = rays.tnear + (static_cast<double>(k) + u) * width;
        }
        for (std::size_t k = 0; k + 1 < n; ++k)
            del[r * n + k] = dv[r * n + k + 1] - dv[r * n + k];
        del[r * n + n - 1] = rays.tfar - dv[r * n + n - 1];
    }
    Tensor depths3 = reshape(out.depths, {b, n, 1});
    Tensor origins3 = reshape(rays.origins, {b, 1, 3});
    Tensor dirs3 = reshape(rays.directions, {b, 1, 3});
    out.points = reshape(add(origins3, mul(depths3, dirs3)), {b * n, 3});
    out.dirs = reshape(broadcast_to(dirs3, {b, n, 3}), {b * n, 3});
    return out;
}

struct RenderOutput {
    Tensor rgb;      // {B,3}
    Tensor weights;  // {B,N}
    Tensor opacity;  // {B,1}, sum of weights
    Tensor depth;    // {B,1}, expected termination depth
};

// Emission-absorption quadrature:
//   alpha_i = 1 - exp(-sigma_i delta_i)
//   T_i     = exp(-sum_{j<i} sigma_j delta_j)
//   w_i     = T_i alpha_i
//   rgb     = sum w_i c_i + (1 - sum w_i) * background
inline RenderOutput composite(const Tensor& sigma /*{B,N}*/, const Tensor& rgb /*{B,N,3}*/,
                              const Tensor& deltas /*{B,N}*/, const Vec3& background) {
    const std::size_t b = sigma.shape()[0];
    const std::size_t n = sigma.shape()[1];
    Tensor sd = mul(sigma, deltas);
    Tensor transmittance = exp(neg(cumsum_exclusive(sd, 1)));
    Tensor alpha = add_scalar(neg(exp(neg(sd))), 1.0);
    RenderOutput out;
    out.weights = mul(transmittance, alpha);
    Tensor w3 = reshape(out.weights, {b, n, 1});
    out.rgb = reshape(sum_axis(mul(w3, rgb), 1), {b, 3});
    out.opacity = sum_axis(out.weights, 1);
    out.depth = Tensor::zeros({b, 1});  // filled by composite_with_depth
    if (background != Vec3{0, 0, 0}) {
        Tensor bg = Tensor::from_values({1, 3}, {background[0], background[1], background[2]});
        Tensor residual = add_scalar(neg(out.opacity), 1.0);  // {B,1}
        out.rgb = add(out.rgb, mul(residual, bg));
    }
    return out;
}

inline RenderOutput composite_with_depth(const Tensor& sigma, const Tensor& rgb,
                                         const RaySamples& samples, const Vec3& background) {
    RenderOutput out = composite(sigma, rgb, samples.deltas, background);
    out.depth = sum_axis(mul(out.weights, samples.depths), 1);
    return out;
}

// Renders one pixel batch end to end: rays -> stratified depths -> field ->
// composite. Gradients reach the field, the encodings, and every camera
// parameter used by generate_rays.
inline RenderOutput render_pixels(const CameraParams& cam, std::span<const PixelCoord> pixels,
                                  const FieldFn& field, double time, std::size_t n_samples,
                                  std::mt19937_64& rng, bool jitter, const Vec3& background,
                                  double near, double far) {
    RayBatch rays = generate_rays(cam, pixels, near, far, time);
    RaySamples samples = stratified_samples(rays, n_samples, rng, jitter);
    FieldSampleBatch fs = field(samples.points, samples.dirs, time);
    const std::size_t b = rays.pixels.size();
    Tensor sigma = reshape(fs.sigma, {b, n_samples});
    Tensor rgb = reshape(fs.rgb, {b, n_samples, 3});
    for (std::size_t i = 0; i < sigma.size(); ++i)
        if (!std::isfinite(sigma.at(i)))
            throw std::runtime_error("render_pixels: non-finite density from field");
    RenderOutput out = composite_with_depth(sigma, rgb, samples, background);
    return out;
}

// Full-image render without gradient tracking, chunked to bound peak memory.
struct ImageBuffer {
    int width = 0;
    int height = 0;
    std::vector<double> rgb;  // row-major, 3 channels in [0,1]

    double& at(int x, int y, int c) {
        return rgb[3 * (static_cast<std::size_t>(y) * static_cast<std::size_t>(width) +
                        static_cast<std::size_t>(x)) + static_cast<std::size_t>(c)];
    }
    double at(int x, int y, int c) const {
        return rgb[3 * (static_cast<std::size_t>(y) * static_cast<std::size_t>(width) +
                        static_cast<std::size_t>(x)) + static_cast<std::size_t>(c)];
    }
};

inline ImageBuffer render_image(const CameraParams& cam, const FieldFn& field, double time,
                                std::size_t n_samples, const Vec3& background, double near,
                                double far, std::size_t chunk_rows = 4) {
    ImageBuffer img;
    img.width = cam.width;
    img.height = cam.height;
    img.rgb.assign(static_cast<std::size_t>(cam.width) * static_cast<std::size_t>(cam.height) * 3, 0.0);
    std::mt19937_64 rng(0);  // unused without jitter
    for (int y0 = 0; y0 < cam.height; y0 += static_cast<int>(chunk_rows)) {
        const int y1 = std::min(cam.height, y0 + static_cast<int>(chunk_rows));
        std::vector<PixelCoord> px;
        px.reserve(static_cast<std::size_t>(cam.width) * static_cast<std::size_t>(y1 - y0));
        for (int y = y0; y < y1; ++y)
            for (int x = 0; x < cam.width; ++x) px.push_back({x, y});
        RenderOutput out =
            render_pixels(cam, px, field, time, n_samples, rng, false, background, near, far);
        for (std::size_t i = 0; i < px.size(); ++i)
            for (int c = 0; c < 3; ++c)
                img.at(px[i].u, px[i].v, c) = std::clamp(out.rgb.at(3 * i + static_cast<std::size_t>(c)), 0.0, 1.0);
    }
    return img;
}

}  // namespace plenopt
