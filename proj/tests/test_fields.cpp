// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "plenopt/fields.hpp"

using namespace plenopt;

namespace {

StaticField tiny_static(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return StaticField::create(8, 2, 2, 2, 2, 1, 2, 2, rng);
}

DynamicField tiny_dynamic(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return DynamicField::create(8, 2, 2, 2, 2, 2, 1, 2, 2, 2, rng);
}

Tensor rand_points(std::size_t m, std::mt19937_64& rng) {
    Tensor t = Tensor::zeros({m, 3});
    for (auto& v : t.mutable_values()) v = 2.0 * uniform_sample(rng) - 1.0;
    return t;
}

Tensor unit_dirs(std::size_t m, std::mt19937_64& rng) {
    Tensor t = Tensor::zeros({m, 3});
    auto& v = t.mutable_values();
    for (std::size_t i = 0; i < m; ++i) {
        double x = normal_sample(rng), y = normal_sample(rng), z = normal_sample(rng);
        const double n = std::sqrt(x * x + y * y + z * z) + 1e-12;
        v[3 * i] = x / n;
        v[3 * i + 1] = y / n;
        v[3 * i + 2] = z / n;
    }
    return t;
}

void zero_all(std::vector<Tensor>& params) {
    for (Tensor& p : params)
        for (auto& v : p.mutable_values()) v = 0.0;
}

}  // namespace

TEST_CASE("static field at zero weights gives softplus(0) and mid-gray") {
    StaticField f = tiny_static(1);
    std::vector<Tensor> params;
    f.density.collect(params);
    f.color.collect(params);
    zero_all(params);
    std::mt19937_64 rng(2);
    Tensor pts = rand_points(5, rng);
    Tensor dirs = unit_dirs(5, rng);
    FieldSampleBatch s = eval_static(pts, dirs, f);
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK_THAT(s.sigma.at(i), Catch::Matchers::WithinAbs(std::log(2.0), 1e-12));
        for (std::size_t c = 0; c < 3; ++c)
            CHECK_THAT(s.rgb.at(3 * i + c), Catch::Matchers::WithinAbs(0.5, 1e-12));
    }
}

TEST_CASE("static density is independent of direction") {
    StaticField f = tiny_static(3);
    std::mt19937_64 rng(4);
    Tensor pts = rand_points(6, rng);
    Tensor d1 = unit_dirs(6, rng);
    Tensor d2 = unit_dirs(6, rng);
    FieldSampleBatch a = eval_static(pts, d1, f);
    FieldSampleBatch b = eval_static(pts, d2, f);
    for (std::size_t i = 0; i < 6; ++i) CHECK(a.sigma.at(i) == b.sigma.at(i));
}

TEST_CASE("static field output ranges") {
    StaticField f = tiny_static(5);
    std::mt19937_64 rng(6);
    Tensor pts = rand_points(20, rng);
    Tensor dirs = unit_dirs(20, rng);
    FieldSampleBatch s = eval_static(pts, dirs, f);
    for (std::size_t i = 0; i < 20; ++i) {
        CHECK(s.sigma.at(i) >= 0.0);
        for (std::size_t c = 0; c < 3; ++c) {
            CHECK(s.rgb.at(3 * i + c) > 0.0);
            CHECK(s.rgb.at(3 * i + c) < 1.0);
        }
    }
}

TEST_CASE("static gradients w.r.t. position match finite differences") {
    StaticField f = tiny_static(7);
    std::mt19937_64 rng(8);
    Tensor pts = rand_points(3, rng);
    pts.set_requires_grad(true);
    Tensor dirs = unit_dirs(3, rng);
    auto loss = [&] {
        FieldSampleBatch s = eval_static(pts, dirs, f);
        return mean(add(s.rgb, broadcast_to(s.sigma, {3, 3})));
    };
    CHECK(gradient_check(loss, {pts}, 1e-5) < 1e-4);
}

TEST_CASE("dynamic field with zeroed deformation reduces to direct evaluation") {
    DynamicField f = tiny_dynamic(9);
    std::vector<Tensor> dparams;
    f.deform.collect(dparams);
    zero_all(dparams);
    std::mt19937_64 rng(10);
    Tensor pts = rand_points(4, rng);
    Tensor dirs = unit_dirs(4, rng);
    // with dx = 0, evaluating at t gives the same as feeding x directly
    Tensor dx = eval_deformation(pts, 0.3, f);
    for (std::size_t i = 0; i < dx.size(); ++i) CHECK(dx.at(i) == 0.0);
    FieldSampleBatch s = eval_dynamic(pts, dirs, 0.3, f);
    CHECK(s.sigma.shape() == Shape{4, 1});
    CHECK(s.blend.shape() == Shape{4, 1});
}

TEST_CASE("deformation stays finite and bounded after init") {
    DynamicField f = tiny_dynamic(11);
    std::mt19937_64 rng(12);
    Tensor pts = rand_points(50, rng);
    for (double t : {0.0, 0.25, 0.5, 1.0}) {
        Tensor dx = eval_deformation(pts, t, f);
        for (std::size_t i = 0; i < dx.size(); ++i) {
            CHECK(std::isfinite(dx.at(i)));
            CHECK(std::abs(dx.at(i)) < 2.0);  // scene diameter in normalized units
        }
    }
}

TEST_CASE("dynamic gradients w.r.t. time match finite differences") {
    DynamicField f = tiny_dynamic(13);
    std::mt19937_64 rng(14);
    Tensor pts = rand_points(3, rng);
    Tensor dirs = unit_dirs(3, rng);
    Tensor t = Tensor::param({1}, {0.4});
    // route time through a tensor by rebuilding the eval with perturbed value
    auto loss = [&] {
        FieldSampleBatch s = eval_dynamic(pts, dirs, t.at(0), f);
        return mean(add(s.rgb, broadcast_to(s.sigma, {3, 3})));
    };
    // finite differences on t against tape gradients is unavailable since time
    // enters as a plain double; instead verify smoothness numerically.
    const double h = 1e-5;
    auto eval_at = [&](double tv) {
        t.mutable_values()[0] = tv;
        return loss().item();
    };
    const double f0 = eval_at(0.4);
    const double fp = eval_at(0.4 + h);
    const double fm = eval_at(0.4 - h);
    const double second = (fp - 2 * f0 + fm) / (h * h);
    CHECK(std::isfinite(second));
    // gradient flows to all dynamic weights
    t.mutable_values()[0] = 0.4;
    std::vector<Tensor> params;
    f.deform.collect(params);
    CHECK(gradient_check(loss, {params[0]}, 1e-5, 3) < 1e-4);
    CHECK_THROWS_AS(eval_dynamic(pts, dirs, 1.5, f), std::invalid_argument);
}

TEST_CASE("fuse blends by density weight") {
    auto mk = [](std::vector<double> sigma, std::vector<double> rgb,
                 std::vector<double> blend) {
        FieldSampleBatch s;
        const std::size_t m = sigma.size();
        s.sigma = Tensor::from_values({m, 1}, std::move(sigma));
        s.rgb = Tensor::from_values({m, 3}, std::move(rgb));
        s.blend = Tensor::from_values({m, 1}, std::move(blend));
        return s;
    };
    FieldSampleBatch stat = mk({1.5}, {0.2, 0.4, 0.6}, {0.0});
    FieldSampleBatch dyn = mk({0.7}, {0.9, 0.1, 0.3}, {0.0});

    SECTION("b = 0 recovers the static sample") {
        dyn.blend = Tensor::from_values({1, 1}, {0.0});
        FieldSampleBatch out = fuse(stat, dyn);
        CHECK_THAT(out.sigma.at(0), Catch::Matchers::WithinAbs(1.5, 1e-12));
        for (std::size_t c = 0; c < 3; ++c)
            CHECK_THAT(out.rgb.at(c), Catch::Matchers::WithinAbs(stat.rgb.at(c), 1e-12));
    }
    SECTION("b = 1 recovers the dynamic sample") {
        dyn.blend = Tensor::from_values({1, 1}, {1.0});
        FieldSampleBatch out = fuse(stat, dyn);
        CHECK_THAT(out.sigma.at(0), Catch::Matchers::WithinAbs(0.7, 1e-12));
        for (std::size_t c = 0; c < 3; ++c)
            CHECK_THAT(out.rgb.at(c), Catch::Matchers::WithinAbs(dyn.rgb.at(c), 1e-12));
    }
    SECTION("blend of equals is the identity for any b") {
        FieldSampleBatch dyn2 = mk({1.5}, {0.2, 0.4, 0.6}, {0.37});
        FieldSampleBatch out = fuse(stat, dyn2);
        CHECK_THAT(out.sigma.at(0), Catch::Matchers::WithinAbs(1.5, 1e-12));
        for (std::size_t c = 0; c < 3; ++c)
            CHECK_THAT(out.rgb.at(c), Catch::Matchers::WithinAbs(stat.rgb.at(c), 1e-12));
    }
    SECTION("fused outputs stay in range for random inputs") {
        std::mt19937_64 rng(15);
        for (int trial = 0; trial < 100; ++trial) {
            auto u = [&] { return uniform_sample(rng); };
            FieldSampleBatch a = mk({3.0 * u()}, {u(), u(), u()}, {0.0});
            FieldSampleBatch b = mk({3.0 * u()}, {u(), u(), u()}, {u()});
            FieldSampleBatch out = fuse(a, b);
            CHECK(out.sigma.at(0) >= 0.0);
            for (std::size_t c = 0; c < 3; ++c) {
                CHECK(out.rgb.at(c) >= 0.0);
                CHECK(out.rgb.at(c) <= 1.0);
            }
        }
    }
}

TEST_CASE("fused model with force_static equals static-only bitwise") {
    std::mt19937_64 rng(16);
    RadianceModel model;
    model.static_field = tiny_static(17);
    model.dynamic_field = tiny_dynamic(18);
    Tensor pts = rand_points(6, rng);
    Tensor dirs = unit_dirs(6, rng);
    FieldSampleBatch a = model.field_fn(true)(pts, dirs, 0.5);
    FieldSampleBatch b = eval_static(normalize_points(pts, model.box), dirs, model.static_field);
    for (std::size_t i = 0; i < a.sigma.size(); ++i) CHECK(a.sigma.at(i) == b.sigma.at(i));
    for (std::size_t i = 0; i < a.rgb.size(); ++i) CHECK(a.rgb.at(i) == b.rgb.at(i));
}

TEST_CASE("field weight gradients pass gradient_check") {
    StaticField f = tiny_static(19);
    std::mt19937_64 rng(20);
    Tensor pts = rand_points(4, rng);
    Tensor dirs = unit_dirs(4, rng);
    auto loss = [&] {
        FieldSampleBatch s = eval_static(pts, dirs, f);
        return add(mean(s.rgb), mean(s.sigma));
    };
    std::vector<Tensor> params;
    f.collect(params);
    params.push_back(f.pos_enc.gates);
    CHECK(gradient_check(loss, params, 1e-5, 5) < 1e-4);
}
