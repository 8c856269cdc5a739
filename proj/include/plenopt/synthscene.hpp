// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "plenopt/camera.hpp"
#include "plenopt/dataio.hpp"
#include "plenopt/fields.hpp"
#include "plenopt/geometry.hpp"
#include "plenopt/renderer.hpp"

namespace plenopt {

// Analytic ground truth: emissive Gaussian blobs with optional linear motion.
// Closed-form density makes an exact oracle with no asset pipeline.
struct GaussianBlob {
    Vec3 center{};
    double radius = 0.3;
    double peak = 4.0;
    Vec3 color{1, 1, 1};
    Vec3 velocity{0, 0, 0};  // active over t in [0,1]
};

struct AnalyticScene {
    std::vector<GaussianBlob> blobs;
    Vec3 box_lo{-1.2, -1.2, -1.2};
    Vec3 box_hi{1.2, 1.2, 1.2};
    Vec3 background{0, 0, 0};

    SceneBox scene_box() const { return SceneBox{box_lo, box_hi}; }
};

inline Vec3 blob_center_at(const GaussianBlob& b, double t) {
    return vadd(b.center, vscale(b.velocity, t));
}

// sigma = sum_b peak_b exp(-|x - c_b(t)|^2 / (2 r_b^2)); color is the
// density-weighted mix, background below the vacuum threshold.
inline void scene_density_color(const AnalyticScene& scene, const Vec3& x, double t,
                                double& sigma, Vec3& rgb) {
    sigma = 0.0;
    Vec3 acc{0, 0, 0};
    for (const GaussianBlob& b : scene.blobs) {
        const Vec3 d = vsub(x, blob_center_at(b, t));
        const double w = b.peak * std::exp(-vdot(d, d) / (2.0 * b.radius * b.radius));
        sigma += w;
        acc = vadd(acc, vscale(b.color, w));
    }
    if (sigma < 1e-9) {
        rgb = scene.background;
    } else {
        rgb = vscale(acc, 1.0 / sigma);
    }
}

// Plain-value camera used by the oracle path; deliberately independent of the
// differentiable ray generator.
struct OracleCamera {
    double fx = 0, fy = 0, cx = 0, cy = 0, skew = 0;
    Mat3 rotation = mat3_identity();  // world-from-camera
    Vec3 center{0, 0, 0};
    int width = 0, height = 0;

    static OracleCamera from_params(const CameraParams& cam) {
        OracleCamera o;
        o.fx = cam.intr.fx.at(0);
        o.fy = cam.intr.fy.at(0);
        o.cx = cam.intr.cx.at(0);
        o.cy = cam.intr.cy.at(0);
        o.skew = cam.intr.skew.at(0);
        o.rotation = cam.extr.rotation_mat();
        o.center = cam.extr.translation_vec();
        o.width = cam.width;
        o.height = cam.height;
        return o;
    }

    Vec3 ray_direction(int u, int v) const {
        const double yimg = (v + 0.5 - cy) / fy;
        const double ximg = (u + 0.5 - cx - skew * yimg) / fx;
        return vnormalize(mat3_apply(rotation, {ximg, -yimg, -1.0}));
    }
};

// Midpoint-rule emission-absorption quadrature with a running transmittance
// product. This is the brute-force reference for the renderer module and the
// generator for synthetic datasets.
inline ImageBuffer oracle_render(const AnalyticScene& scene, const OracleCamera& cam, double t,
                                 std::size_t n_samples, double near, double far) {
    ImageBuffer img;
    img.width = cam.width;
    img.height = cam.height;
    img.rgb.assign(static_cast<std::size_t>(cam.width) * static_cast<std::size_t>(cam.height) * 3,
                   0.0);
    const double dt = (far - near) / static_cast<double>(n_samples);
    for (int v = 0; v < cam.height; ++v) {
        for (int u = 0; u < cam.width; ++u) {
            const Vec3 dir = cam.ray_direction(u, v);
            double transmittance = 1.0;
            Vec3 acc{0, 0, 0};
            for (std::size_t k = 0; k < n_samples; ++k) {
                const double depth = near + (static_cast<double>(k) + 0.5) * dt;
                const Vec3 x = vadd(cam.center, vscale(dir, depth));
                double sigma;
                Vec3 rgb;
                scene_density_color(scene, x, t, sigma, rgb);
                const double alpha = 1.0 - std::exp(-sigma * dt);
                acc = vadd(acc, vscale(rgb, transmittance * alpha));
                transmittance *= 1.0 - alpha;
            }
            acc = vadd(acc, vscale(scene.background, transmittance));
            for (int c = 0; c < 3; ++c)
                img.at(u, v, c) = std::clamp(acc[static_cast<std::size_t>(c)], 0.0, 1.0);
        }
    }
    return img;
}

// FieldFn adapter so the differentiable renderer can drive the analytic scene
// directly (oracle-equivalence checks run the same field through both paths).
inline FieldFn analytic_field_fn(const AnalyticScene& scene) {
    return [&scene](const Tensor& pts, const Tensor& dirs, double time) {
        (void)dirs;
        const std::size_t m = pts.shape()[0];
        FieldSampleBatch out;
        out.sigma = Tensor::zeros({m, 1});
        out.rgb = Tensor::zeros({m, 3});
        out.blend = Tensor::zeros({m, 1});
        auto& sv = out.sigma.mutable_values();
        auto& cv = out.rgb.mutable_values();
        for (std::size_t i = 0; i < m; ++i) {
            const Vec3 x = {pts.at(3 * i), pts.at(3 * i + 1), pts.at(3 * i + 2)};
            double sigma;
            Vec3 rgb;
            scene_density_color(scene, x, time, sigma, rgb);
            sv[i] = sigma;
            for (std::size_t c = 0; c < 3; ++c) cv[3 * i + c] = rgb[c];
        }
        return out;
    };
}

// Stock desk-scale scene: a few colored blobs around the origin. The dynamic
// variant gives the first blob a lateral drift.
inline AnalyticScene make_blob_scene(std::size_t n_blobs, bool dynamic, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    AnalyticScene scene;
    const std::vector<Vec3> palette = {
        {0.9, 0.25, 0.2}, {0.2, 0.8, 0.3}, {0.25, 0.35, 0.95}, {0.95, 0.85, 0.2},
        {0.8, 0.3, 0.9},  {0.2, 0.85, 0.9},
    };
    for (std::size_t i = 0; i < n_blobs; ++i) {
        GaussianBlob b;
        for (auto& c : b.center) c = 1.1 * (2.0 * uniform_sample(rng) - 1.0);
        b.radius = 0.25 + 0.2 * uniform_sample(rng);
        b.peak = 3.0 + 3.0 * uniform_sample(rng);
        b.color = palette[i % palette.size()];
        if (dynamic && i == 0) b.velocity = {0.6, 0.0, 0.0};
        scene.blobs.push_back(b);
    }
    if (dynamic) {
        // keep moving centers inside the box over t in [0,1]
        for (const GaussianBlob& b : scene.blobs)
            for (int i = 0; i < 3; ++i) {
                const double end = blob_center_at(b, 1.0)[static_cast<std::size_t>(i)];
                scene.box_lo[static_cast<std::size_t>(i)] =
                    std::min(scene.box_lo[static_cast<std::size_t>(i)], end - 0.1);
                scene.box_hi[static_cast<std::size_t>(i)] =
                    std::max(scene.box_hi[static_cast<std::size_t>(i)], end + 0.1);
            }
    }
    return scene;
}

enum class CameraLayout { kRing, kForwardFacing };

inline CameraLayout camera_layout_from_string(const std::string& s) {
    if (s == "ring") return CameraLayout::kRing;
    if (s == "forward") return CameraLayout::kForwardFacing;
    throw std::invalid_argument("unknown camera layout: " + s);
}

// Ground-truth cameras: either a ring looking at the scene center or a
// forward-facing cluster (identity rotations) for the monocular case.
inline std::vector<CameraParams> layout_cameras(CameraLayout layout, std::size_t n_views,
                                                double radius, int width, int height,
                                                double focal_scale = 1.0) {
    std::vector<CameraParams> cams;
    cams.reserve(n_views);
    for (std::size_t i = 0; i < n_views; ++i) {
        CameraParams c;
        c.width = width;
        c.height = height;
        const double f = focal_scale * width;
        c.intr = IntrinsicParams::create(f, f, width / 2.0, height / 2.0, 0.0, false, false);
        const double phi = 2.0 * M_PI * static_cast<double>(i) / static_cast<double>(n_views);
        if (layout == CameraLayout::kRing) {
            const Vec3 eye = {radius * std::sin(phi), 0.35 * radius * std::sin(2.0 * phi),
                              radius * std::cos(phi)};
            // look-at: camera -z axis points at the origin
            const Vec3 zc = vnormalize(eye);
            const Vec3 up = {0, 1, 0};
            const Vec3 xc = vnormalize(vcross(up, zc));
            const Vec3 yc = vcross(zc, xc);
            const Mat3 rot = {xc[0], yc[0], zc[0], xc[1], yc[1], zc[1], xc[2], yc[2], zc[2]};
            c.extr = ExtrinsicParams::create(so3_log(rot), eye, false);
        } else {
            const Vec3 eye = {radius * std::cos(phi), radius * std::sin(phi), 0.0};
            c.extr = ExtrinsicParams::create({0, 0, 0}, eye, false);
        }
        cams.push_back(std::move(c));
    }
    return cams;
}

struct DatasetSpec {
    std::size_t n_views = 8;
    std::size_t n_timesteps = 1;
    int width = 64;
    int height = 64;
    double ring_radius = 4.0;
    double near = 0.1;
    double far = 6.0;
    CameraLayout layout = CameraLayout::kRing;
    double focal_scale = 1.0;
    std::size_t oracle_samples = 512;
    std::uint64_t seed = 1;
    bool write_cameras = true;  // false produces a pose-free dataset
};

// Renders the analytic scene from ground-truth cameras and writes the
// dataset layout: manifest.json, cameras.json, images/v###_t###.png.
// The last view is held out for novel-view evaluation.
inline Dataset make_dataset(const AnalyticScene& scene, const DatasetSpec& spec,
                            const std::string& out_dir) {
    namespace fs = std::filesystem;
    if (spec.n_views < 2) throw std::invalid_argument("make_dataset: need n_views >= 2");
    fs::create_directories(out_dir + "/images");
    auto cams = layout_cameras(spec.layout, spec.n_views, spec.ring_radius, spec.width,
                               spec.height, spec.focal_scale);
    json manifest;
    manifest["width"] = spec.width;
    manifest["height"] = spec.height;
    manifest["near"] = spec.near;
    manifest["far"] = spec.far;
    manifest["n_views"] = spec.n_views;
    manifest["n_timesteps"] = spec.n_timesteps;
    manifest["holdout_views"] = {static_cast<int>(spec.n_views) - 1};
    manifest["scene_box"] = {{"lo", scene.box_lo}, {"hi", scene.box_hi}};
    manifest["frames"] = json::array();
    for (std::size_t v = 0; v < spec.n_views; ++v) {
        const OracleCamera ocam = OracleCamera::from_params(cams[v]);
        for (std::size_t ti = 0; ti < spec.n_timesteps; ++ti) {
            const double t = spec.n_timesteps <= 1
                                 ? 0.0
                                 : static_cast<double>(ti) / static_cast<double>(spec.n_timesteps - 1);
            ImageBuffer img =
                oracle_render(scene, ocam, t, spec.oracle_samples, spec.near, spec.far);
            const std::string name = frame_image_name(static_cast<int>(v), static_cast<int>(ti));
            save_png(img, out_dir + "/" + name);
            manifest["frames"].push_back({{"view", v},
                                          {"time_index", ti},
                                          {"time", t},
                                          {"image", name}});
        }
    }
    {
        std::ofstream out(out_dir + "/manifest.json");
        if (!out) throw std::runtime_error("make_dataset: cannot write manifest in " + out_dir);
        out << manifest.dump(2) << "\n";
    }
    if (spec.write_cameras) save_cameras_json(cams, out_dir + "/cameras.json");
    return load_dataset(out_dir);
}

}  // namespace plenopt
