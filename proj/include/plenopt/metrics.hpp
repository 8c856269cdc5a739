// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <vector>

#include "plenopt/camera.hpp"
#include "plenopt/renderer.hpp"

namespace plenopt {

// ---- image quality ----

inline double mse(const ImageBuffer& a, const ImageBuffer& b) {
    if (a.width != b.width || a.height != b.height)
        throw std::invalid_argument("mse: image dimensions differ");
    double s = 0.0;
    for (std::size_t i = 0; i < a.rgb.size(); ++i) {
        const double d = a.rgb[i] - b.rgb[i];
        s += d * d;
    }
    return s / static_cast<double>(a.rgb.size());
}

inline double psnr_from_mse(double mse_value) {
    if (mse_value <= 0.0) return std::numeric_limits<double>::infinity();
    return -10.0 * std::log10(mse_value);
}

inline double psnr(const ImageBuffer& a, const ImageBuffer& b) {
    return psnr_from_mse(mse(a, b));
}

// Single-scale SSIM: 11x11 Gaussian window (sigma 1.5), C1 = 0.01^2,
// C2 = 0.03^2, averaged over valid window centers and channels.
inline double ssim(const ImageBuffer& a, const ImageBuffer& b) {
    if (a.width != b.width || a.height != b.height)
        throw std::invalid_argument("ssim: image dimensions differ");
    constexpr int kRadius = 5;
    constexpr double kC1 = 0.01 * 0.01;
    constexpr double kC2 = 0.03 * 0.03;
    if (a.width < 11 || a.height < 11)
        throw std::invalid_argument("ssim: images must be at least 11x11");
    double window[11][11];
    double wsum = 0.0;
    for (int i = -kRadius; i <= kRadius; ++i)
        for (int j = -kRadius; j <= kRadius; ++j) {
            window[i + kRadius][j + kRadius] = std::exp(-(i * i + j * j) / (2.0 * 1.5 * 1.5));
            wsum += window[i + kRadius][j + kRadius];
        }
    for (auto& row : window)
        for (double& w : row) w /= wsum;

    double total = 0.0;
    std::size_t count = 0;
    for (int c = 0; c < 3; ++c) {
        for (int y = kRadius; y < a.height - kRadius; ++y) {
            for (int x = kRadius; x < a.width - kRadius; ++x) {
                double mu1 = 0, mu2 = 0, e11 = 0, e22 = 0, e12 = 0;
                for (int i = -kRadius; i <= kRadius; ++i)
                    for (int j = -kRadius; j <= kRadius; ++j) {
                        const double w = window[i + kRadius][j + kRadius];
                        const double p = a.at(x + j, y + i, c);
                        const double q = b.at(x + j, y + i, c);
                        mu1 += w * p;
                        mu2 += w * q;
                        e11 += w * p * p;
                        e22 += w * q * q;
                        e12 += w * p * q;
                    }
                const double var1 = e11 - mu1 * mu1;
                const double var2 = e22 - mu2 * mu2;
                const double cov = e12 - mu1 * mu2;
                const double num = (2.0 * mu1 * mu2 + kC1) * (2.0 * cov + kC2);
                const double den = (mu1 * mu1 + mu2 * mu2 + kC1) * (var1 + var2 + kC2);
                total += num / den;
                ++count;
            }
        }
    }
    return total / static_cast<double>(count);
}

// ---- trajectory error ----

struct SimilarityTransform {
    double scale = 1.0;
    Mat3 rotation = mat3_identity();
    Vec3 translation{0, 0, 0};

    Vec3 apply(const Vec3& x) const {
        return vadd(vscale(mat3_apply(rotation, x), scale), translation);
    }
};

struct TrajectoryError {
    double ate_rmse = 0.0;
    std::vector<double> translation_errors;   // per frame, world units, after alignment
    std::vector<double> rotation_errors_deg;  // geodesic, after alignment
    SimilarityTransform alignment;
    bool degenerate = false;  // alignment fell back to s = 1
};

// Closed-form orthogonal-Procrustes-with-scale (Umeyama) aligning the
// estimated camera centers onto ground truth. Fewer than 3 cameras, or
// coincident centers, fall back to rigid / unit-scale alignment.
inline SimilarityTransform umeyama_alignment(const std::vector<Vec3>& from,
                                             const std::vector<Vec3>& to, bool with_scale,
                                             bool* degenerate = nullptr) {
    const std::size_t n = from.size();
    if (n != to.size() || n == 0)
        throw std::invalid_argument("umeyama_alignment: point counts differ or empty");
    Eigen::Vector3d mu_from = Eigen::Vector3d::Zero(), mu_to = Eigen::Vector3d::Zero();
    for (std::size_t i = 0; i < n; ++i) {
        mu_from += Eigen::Vector3d(from[i][0], from[i][1], from[i][2]);
        mu_to += Eigen::Vector3d(to[i][0], to[i][1], to[i][2]);
    }
    mu_from /= static_cast<double>(n);
    mu_to /= static_cast<double>(n);
    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
    double var_from = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const Eigen::Vector3d df = Eigen::Vector3d(from[i][0], from[i][1], from[i][2]) - mu_from;
        const Eigen::Vector3d dt = Eigen::Vector3d(to[i][0], to[i][1], to[i][2]) - mu_to;
        cov += dt * df.transpose();
        var_from += df.squaredNorm();
    }
    cov /= static_cast<double>(n);
    var_from /= static_cast<double>(n);
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Matrix3d s = Eigen::Matrix3d::Identity();
    if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) s(2, 2) = -1.0;
    const Eigen::Matrix3d rot = svd.matrixU() * s * svd.matrixV().transpose();
    SimilarityTransform result;
    bool degen = var_from < 1e-18 || n < 3;
    if (with_scale && !degen) {
        result.scale = (svd.singularValues().asDiagonal() * s).trace() / var_from;
    } else {
        result.scale = 1.0;
    }
    if (degenerate) *degenerate = degen;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            result.rotation[static_cast<std::size_t>(3 * i + j)] = rot(i, j);
    const Eigen::Vector3d t = mu_to - result.scale * (rot * mu_from);
    result.translation = {t(0), t(1), t(2)};
    return result;
}

inline TrajectoryError ate(const std::vector<CameraParams>& estimated,
                           const std::vector<CameraParams>& ground_truth) {
    if (estimated.size() != ground_truth.size())
        throw std::invalid_argument("ate: camera counts differ");
    if (estimated.empty()) throw std::invalid_argument("ate: no cameras");
    std::vector<Vec3> est, gt;
    for (const auto& c : estimated) est.push_back(c.extr.translation_vec());
    for (const auto& c : ground_truth) gt.push_back(c.extr.translation_vec());
    TrajectoryError err;
    err.alignment = umeyama_alignment(est, gt, /*with_scale=*/true, &err.degenerate);
    double sq = 0.0;
    for (std::size_t i = 0; i < est.size(); ++i) {
        const Vec3 aligned = err.alignment.apply(est[i]);
        const double d = vnorm(vsub(aligned, gt[i]));
        err.translation_errors.push_back(d);
        sq += d * d;
        const Mat3 r_aligned = mat3_mul(err.alignment.rotation, estimated[i].extr.rotation_mat());
        err.rotation_errors_deg.push_back(geodesic_deg(r_aligned, ground_truth[i].extr.rotation_mat()));
    }
    err.ate_rmse = std::sqrt(sq / static_cast<double>(est.size()));
    return err;
}

// Mean over views of (|fx - fx_hat| + |fy - fy_hat|) / 2, in pixels.
inline double focal_error_px(const std::vector<CameraParams>& estimated,
                             const std::vector<CameraParams>& ground_truth) {
    if (estimated.size() != ground_truth.size())
        throw std::invalid_argument("focal_error_px: camera counts differ");
    if (estimated.empty()) throw std::invalid_argument("focal_error_px: no cameras");
    double total = 0.0;
    for (std::size_t i = 0; i < estimated.size(); ++i)
        total += (std::abs(estimated[i].intr.fx.at(0) - ground_truth[i].intr.fx.at(0)) +
                  std::abs(estimated[i].intr.fy.at(0) - ground_truth[i].intr.fy.at(0))) /
                 2.0;
    return total / static_cast<double>(estimated.size());
}

}  // namespace plenopt
