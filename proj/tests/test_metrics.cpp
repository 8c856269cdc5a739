// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "plenopt/metrics.hpp"
#include "plenopt/optim.hpp"

using namespace plenopt;

namespace {

ImageBuffer solid(int w, int h, double r, double g, double b) {
    ImageBuffer img;
    img.width = w;
    img.height = h;
    img.rgb.assign(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 3, 0.0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            img.at(x, y, 0) = r;
            img.at(x, y, 1) = g;
            img.at(x, y, 2) = b;
        }
    return img;
}

ImageBuffer checkerboard(int w, int h) {
    ImageBuffer img = solid(w, h, 0, 0, 0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double v = ((x / 4 + y / 4) % 2 == 0) ? 0.85 : 0.15;
            for (int c = 0; c < 3; ++c) img.at(x, y, c) = v;
        }
    return img;
}

std::vector<CameraParams> random_trajectory(std::size_t n, std::mt19937_64& rng) {
    std::vector<CameraParams> cams;
    for (std::size_t i = 0; i < n; ++i) {
        CameraParams c;
        c.width = 64;
        c.height = 64;
        c.intr = IntrinsicParams::create(64, 64, 32, 32, 0, false);
        Vec3 w, t;
        for (auto& x : w) x = 0.8 * (2.0 * uniform_sample(rng) - 1.0);
        for (auto& x : t) x = 4.0 * (2.0 * uniform_sample(rng) - 1.0);
        c.extr = ExtrinsicParams::create(w, t, false);
        cams.push_back(std::move(c));
    }
    return cams;
}

std::vector<CameraParams> transform_trajectory(const std::vector<CameraParams>& cams,
                                               const SimilarityTransform& s) {
    std::vector<CameraParams> out;
    for (const auto& c : cams) {
        CameraParams n = c.clone();
        const Vec3 center = s.apply(c.extr.translation_vec());
        const Mat3 rot = mat3_mul(s.rotation, c.extr.rotation_mat());
        n.extr = ExtrinsicParams::create(so3_log(rot), center, false);
        out.push_back(std::move(n));
    }
    return out;
}

}  // namespace

TEST_CASE("psnr formula") {
    CHECK(psnr_from_mse(0.0) == std::numeric_limits<double>::infinity());
    CHECK_THAT(psnr_from_mse(0.01), Catch::Matchers::WithinAbs(20.0, 1e-12));
    CHECK_THAT(psnr_from_mse(1.0), Catch::Matchers::WithinAbs(0.0, 1e-12));

    ImageBuffer black = solid(16, 16, 0, 0, 0);
    ImageBuffer white = solid(16, 16, 1, 1, 1);
    CHECK(psnr(black, black) == std::numeric_limits<double>::infinity());
    CHECK_THAT(psnr(black, white), Catch::Matchers::WithinAbs(0.0, 1e-12));

    ImageBuffer off = solid(16, 16, 0.1, 0.1, 0.1);
    CHECK_THAT(psnr(black, off), Catch::Matchers::WithinAbs(20.0, 1e-9));
    CHECK(psnr(black, off) == psnr(off, black));

    ImageBuffer wrong = solid(8, 8, 0, 0, 0);
    CHECK_THROWS_AS(psnr(black, wrong), std::invalid_argument);
}

TEST_CASE("ssim identities and hand cases") {
    ImageBuffer board = checkerboard(32, 32);
    CHECK(ssim(board, board) == 1.0);

    // image vs its negative scores low
    ImageBuffer negative = board;
    for (double& v : negative.rgb) v = 1.0 - v;
    CHECK(ssim(board, negative) < 0.5);
    CHECK(ssim(board, negative) == ssim(negative, board));

    // constant images: luminance-only penalty, closed form
    ImageBuffer a = solid(16, 16, 0.25, 0.25, 0.25);
    ImageBuffer b = solid(16, 16, 0.5, 0.5, 0.5);
    const double c1 = 0.01 * 0.01;
    const double expect = (2.0 * 0.25 * 0.5 + c1) / (0.25 * 0.25 + 0.5 * 0.5 + c1);
    CHECK_THAT(ssim(a, b), Catch::Matchers::WithinAbs(expect, 1e-9));

    ImageBuffer tiny = solid(8, 8, 0, 0, 0);
    CHECK_THROWS_AS(ssim(tiny, tiny), std::invalid_argument);
}

TEST_CASE("ate basics") {
    std::mt19937_64 rng(3);
    auto truth = random_trajectory(6, rng);

    SECTION("exact estimates give zero error") {
        TrajectoryError e = ate(truth, truth);
        CHECK_THAT(e.ate_rmse, Catch::Matchers::WithinAbs(0.0, 1e-12));
        for (double r : e.rotation_errors_deg) CHECK(r < 1e-6);
    }

    SECTION("global similarity transforms are absorbed") {
        SimilarityTransform s;
        s.scale = 2.0;
        const Vec3 axis = vnormalize(Vec3{1, 2, -1});
        s.rotation = so3_exp_mat(vscale(axis, 30.0 * M_PI / 180.0));
        s.translation = {0.5, -1.0, 2.0};
        auto moved = transform_trajectory(truth, s);
        TrajectoryError e = ate(moved, truth);
        CHECK(e.ate_rmse < 1e-9);
    }

    SECTION("ATE invariance over 100 random similarity transforms") {
        auto est = random_trajectory(6, rng);
        for (auto& c : est) {
            auto& t = c.extr.translation.mutable_values();
            for (auto& v : t) v += 0.1 * (2.0 * uniform_sample(rng) - 1.0);
        }
        const double base = ate(est, truth).ate_rmse;
        for (int trial = 0; trial < 100; ++trial) {
            SimilarityTransform s;
            s.scale = 0.5 + 2.0 * uniform_sample(rng);
            Vec3 axis = {normal_sample(rng), normal_sample(rng), normal_sample(rng)};
            s.rotation = so3_exp_mat(vscale(vnormalize(axis), M_PI * uniform_sample(rng)));
            for (auto& v : s.translation) v = 3.0 * (2.0 * uniform_sample(rng) - 1.0);
            const double moved = ate(transform_trajectory(est, s), truth).ate_rmse;
            CHECK(std::abs(moved - base) < 1e-9);
        }
    }

    SECTION("single offset camera against a brute-force alignment search") {
        auto truth4 = random_trajectory(4, rng);
        auto est = random_trajectory(4, rng);
        for (std::size_t i = 0; i < 4; ++i) {
            est[i].extr.translation.mutable_values() =
                std::vector<double>{truth4[i].extr.translation_vec().begin(),
                                    truth4[i].extr.translation_vec().end()};
            est[i].extr.rotation.mutable_values() =
                std::vector<double>{truth4[i].extr.rotation_vec().begin(),
                                    truth4[i].extr.rotation_vec().end()};
        }
        est[2].extr.translation.mutable_values()[0] += 0.3;
        const double ours = ate(est, truth4).ate_rmse;

        // brute force: grid over small rotations and scales, translation closed-form
        std::vector<Vec3> efrom, eto;
        for (std::size_t i = 0; i < 4; ++i) {
            efrom.push_back(est[i].extr.translation_vec());
            eto.push_back(truth4[i].extr.translation_vec());
        }
        double best = std::numeric_limits<double>::infinity();
        for (double s = 0.9; s <= 1.1001; s += 0.002) {
            for (double ax = -0.04; ax <= 0.0401; ax += 0.008)
                for (double ay = -0.04; ay <= 0.0401; ay += 0.008)
                    for (double az = -0.04; az <= 0.0401; az += 0.008) {
                        const Mat3 r = so3_exp_mat({ax, ay, az});
                        Vec3 mu_f{0, 0, 0}, mu_t{0, 0, 0};
                        for (std::size_t i = 0; i < 4; ++i) {
                            mu_f = vadd(mu_f, vscale(mat3_apply(r, efrom[i]), s));
                            mu_t = vadd(mu_t, eto[i]);
                        }
                        mu_f = vscale(mu_f, 0.25);
                        mu_t = vscale(mu_t, 0.25);
                        const Vec3 t = vsub(mu_t, mu_f);
                        double sq = 0.0;
                        for (std::size_t i = 0; i < 4; ++i) {
                            const Vec3 p = vadd(vscale(mat3_apply(r, efrom[i]), s), t);
                            const double d = vnorm(vsub(p, eto[i]));
                            sq += d * d;
                        }
                        best = std::min(best, std::sqrt(sq / 4.0));
                    }
        }
        CHECK(ours <= best + 1e-9);          // Umeyama is optimal
        CHECK(best - ours < 0.01);           // and the grid gets close to it
        CHECK(ours < 0.3);                   // alignment absorbs part of the offset
        CHECK(ours > 0.01);                  // but a per-view residual remains
    }

    SECTION("degenerate and small inputs") {
        auto two = random_trajectory(2, rng);
        TrajectoryError e = ate(two, two);  // rigid fallback, no throw
        CHECK(e.ate_rmse < 1e-12);
        CHECK(e.alignment.scale == 1.0);

        auto coincident = random_trajectory(4, rng);
        for (auto& c : coincident) c.extr.translation.mutable_values() = {1.0, 2.0, 3.0};
        TrajectoryError d = ate(coincident, coincident);
        CHECK(d.degenerate);
        CHECK(d.alignment.scale == 1.0);
    }
}

TEST_CASE("focal_error_px") {
    std::mt19937_64 rng(5);
    auto truth = random_trajectory(3, rng);
    auto est = random_trajectory(3, rng);
    for (std::size_t i = 0; i < 3; ++i) {
        est[i].intr.fx.mutable_values()[0] = truth[i].intr.fx.at(0);
        est[i].intr.fy.mutable_values()[0] = truth[i].intr.fy.at(0);
    }
    CHECK(focal_error_px(est, truth) == 0.0);

    for (std::size_t i = 0; i < 3; ++i) {
        est[i].intr.fx.mutable_values()[0] = truth[i].intr.fx.at(0) + 10.0;
        est[i].intr.fy.mutable_values()[0] = truth[i].intr.fy.at(0) + 10.0;
    }
    CHECK_THAT(focal_error_px(est, truth), Catch::Matchers::WithinAbs(10.0, 1e-12));

    for (std::size_t i = 0; i < 3; ++i) {
        est[i].intr.fx.mutable_values()[0] = truth[i].intr.fx.at(0) + 4.0;
        est[i].intr.fy.mutable_values()[0] = truth[i].intr.fy.at(0) - 2.0;
    }
    CHECK_THAT(focal_error_px(est, truth), Catch::Matchers::WithinAbs(3.0, 1e-12));

    auto fewer = random_trajectory(2, rng);
    CHECK_THROWS_AS(focal_error_px(fewer, truth), std::invalid_argument);
}
