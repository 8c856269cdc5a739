// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "plenopt/encoding.hpp"

using namespace plenopt;

namespace {

EncodingParams axis_aligned(std::size_t input_dim, std::size_t bands, std::size_t freqs) {
    std::mt19937_64 rng(1);
    EncodingParams p = EncodingParams::create(input_dim, bands, freqs, rng, 0.0);
    return p;
}

}  // namespace

TEST_CASE("encode_position basics") {
    std::mt19937_64 rng(3);
    EncodingParams p = EncodingParams::create(3, 2, 4, rng);

    // p = 0: sin entries 0, cos entries 1
    Tensor zero = Tensor::zeros({1, 3});
    Tensor enc = encode_position(zero, p);
    REQUIRE(enc.size() == 2 * p.total_freqs());
    for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t j = 0; j < 4; ++j) {
            CHECK(enc.at(b * 8 + j) == 0.0);      // sin block
            CHECK(enc.at(b * 8 + 4 + j) == 1.0);  // cos block
        }

    // single-band, single-frequency direct evaluation
    EncodingParams tiny = axis_aligned(3, 1, 1);
    tiny.weights[0].mutable_values() = {M_PI / 2, 0.0, 0.0};
    Tensor x = Tensor::from_values({1, 3}, {1, 0, 0});
    Tensor e = encode_position(x, tiny);
    REQUIRE(e.size() == 2);
    CHECK_THAT(e.at(0), Catch::Matchers::WithinAbs(1.0, 1e-15));
    CHECK_THAT(e.at(1), Catch::Matchers::WithinAbs(0.0, 1e-15));
}

TEST_CASE("encode_frequency band scaling") {
    // W1 = W2 with W . p = 1: band 1 arg = pi, band 2 arg = 2 pi
    EncodingParams p = axis_aligned(3, 2, 1);
    p.weights[0].mutable_values() = {1, 0, 0};
    p.weights[1].mutable_values() = {1, 0, 0};
    Tensor x = Tensor::from_values({1, 3}, {1, 0, 0});
    Tensor e = encode_frequency(x, p);
    REQUIRE(e.size() == 4);
    CHECK_THAT(e.at(0), Catch::Matchers::WithinAbs(0.0, 1e-12));   // sin pi
    CHECK_THAT(e.at(1), Catch::Matchers::WithinAbs(-1.0, 1e-12));  // cos pi
    CHECK_THAT(e.at(2), Catch::Matchers::WithinAbs(0.0, 1e-12));   // sin 2pi
    CHECK_THAT(e.at(3), Catch::Matchers::WithinAbs(1.0, 1e-12));   // cos 2pi

    // doubling p doubles every band's argument
    std::mt19937_64 rng(5);
    EncodingParams q = EncodingParams::create(3, 3, 2, rng);
    Tensor a = Tensor::from_values({1, 3}, {0.2, -0.1, 0.3});
    Tensor a2 = Tensor::from_values({1, 3}, {0.4, -0.2, 0.6});
    // compare arguments via atan2(sin, cos) on the first band (small args)
    Tensor e1 = encode_frequency(a, q);
    Tensor e2 = encode_frequency(a2, q);
    for (std::size_t j = 0; j < 2; ++j) {
        const double arg1 = std::atan2(e1.at(j), e1.at(2 + j));
        const double arg2 = std::atan2(e2.at(j), e2.at(2 + j));
        CHECK_THAT(arg2, Catch::Matchers::WithinAbs(2.0 * arg1, 1e-9));
    }
}

TEST_CASE("encode_grid gating and shape") {
    std::mt19937_64 rng(7);
    EncodingParams p = EncodingParams::create(3, 3, 2, rng);
    Tensor x = Tensor::from_values({2, 3}, {0.1, 0.2, 0.3, -0.4, 0.5, -0.6});

    // shape law: 4 * total frequencies, independent of gates
    init_gates(p, 1);
    Tensor e = encode_grid(x, p);
    REQUIRE(e.shape() == Shape{2, p.encoded_dim()});
    CHECK(p.encoded_dim() == 4 * 6);

    // gates wide open reproduce the plain concatenation
    for (auto& g : p.gates.mutable_values()) g = 60.0;  // sigma == 1 to machine precision
    Tensor open = encode_grid(x, p);
    Tensor ref = concat({encode_position(x, p), encode_frequency(x, p)}, 1);
    for (std::size_t i = 0; i < ref.size(); ++i)
        CHECK_THAT(open.at(i), Catch::Matchers::WithinAbs(ref.at(i), 1e-12));

    // gates closed kill the output
    for (auto& g : p.gates.mutable_values()) g = -60.0;
    Tensor closed = encode_grid(x, p);
    for (std::size_t i = 0; i < closed.size(); ++i)
        CHECK_THAT(closed.at(i), Catch::Matchers::WithinAbs(0.0, 1e-12));

    // boundedness: pre-gate entries in [-1,1] => post-gate strictly inside
    init_gates(p, 2);
    Tensor mid = encode_grid(x, p);
    for (std::size_t i = 0; i < mid.size(); ++i) {
        CHECK(mid.at(i) > -1.0);
        CHECK(mid.at(i) < 1.0);
    }
}

TEST_CASE("init_gates sigma table") {
    std::mt19937_64 rng(9);
    EncodingParams p = EncodingParams::create(3, 6, 2, rng);

    init_gates(p, 6);
    for (double g : p.gates.values()) CHECK(g == 4.0);

    init_gates(p, 2);
    const double open = 1.0 / (1.0 + std::exp(-4.0));
    const double closed = 1.0 / (1.0 + std::exp(4.0));
    Tensor s = sigmoid(p.gates);
    CHECK_THAT(s.at(0), Catch::Matchers::WithinAbs(open, 1e-12));
    CHECK_THAT(s.at(1), Catch::Matchers::WithinAbs(open, 1e-12));
    for (std::size_t k = 2; k < 6; ++k)
        CHECK_THAT(s.at(k), Catch::Matchers::WithinAbs(closed, 1e-12));
    CHECK_THAT(open, Catch::Matchers::WithinAbs(0.982, 5e-4));
    CHECK_THAT(closed, Catch::Matchers::WithinAbs(0.018, 5e-4));

    // warm_bands = 0: encoded norm <= 0.02 * open-gate norm
    Tensor x = Tensor::from_values({1, 3}, {0.3, -0.2, 0.5});
    init_gates(p, 0);
    Tensor cold_enc = encode_grid(x, p);
    init_gates(p, 6);
    Tensor warm_enc = encode_grid(x, p);
    double cold = 0.0, warm = 0.0;
    for (std::size_t i = 0; i < cold_enc.size(); ++i) {
        cold += cold_enc.at(i) * cold_enc.at(i);
        warm += warm_enc.at(i) * warm_enc.at(i);
    }
    CHECK(std::sqrt(cold) <= 0.02 * std::sqrt(warm));

    CHECK_THROWS_AS(init_gates(p, 7), std::invalid_argument);
}

TEST_CASE("encode_grid gradients pass gradient_check") {
    std::mt19937_64 rng(11);
    EncodingParams p = EncodingParams::create(3, 2, 2, rng);
    init_gates(p, 1);
    Tensor x = Tensor::zeros({4, 3});
    for (auto& v : x.mutable_values()) v = 2.0 * uniform_sample(rng) - 1.0;
    x.set_requires_grad(true);

    auto f = [&] {
        Tensor e = encode_grid(x, p);
        Tensor w = Tensor::zeros(e.shape());
        for (std::size_t i = 0; i < w.size(); ++i) w.mutable_values()[i] = 0.05 * double(i % 7) - 0.1;
        return sum(mul(e, w));
    };
    std::vector<Tensor> params = {x, p.gates};
    for (const Tensor& w : p.weights) params.push_back(w);
    CHECK(gradient_check(f, params, 1e-6) < 1e-6);
}

TEST_CASE("axis-aligned configuration reproduces classic Fourier features") {
    const std::size_t bands = 4;
    EncodingParams p = axis_aligned(3, bands, 3);  // identity rows, no noise
    std::mt19937_64 rng(13);
    for (int trial = 0; trial < 100; ++trial) {
        std::array<double, 3> pt;
        Tensor x = Tensor::zeros({1, 3});
        for (std::size_t i = 0; i < 3; ++i) {
            pt[i] = 2.0 * uniform_sample(rng) - 1.0;
            x.mutable_values()[i] = pt[i];
        }
        Tensor e = encode_frequency(x, p);
        // classic features: [sin(2^k pi x), sin(2^k pi y), sin(2^k pi z), cos(...)]
        std::size_t idx = 0;
        double max_diff = 0.0;
        for (std::size_t k = 0; k < bands; ++k) {
            const double s = std::ldexp(M_PI, static_cast<int>(k));
            for (std::size_t a = 0; a < 3; ++a)
                max_diff = std::max(max_diff, std::abs(e.at(idx++) - std::sin(s * pt[a])));
            for (std::size_t a = 0; a < 3; ++a)
                max_diff = std::max(max_diff, std::abs(e.at(idx++) - std::cos(s * pt[a])));
        }
        CHECK(max_diff < 1e-12);
    }
}
