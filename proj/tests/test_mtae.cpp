#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>

#include "fedss/mtae.hpp"
#include "support.hpp"

using namespace fedss;
using Catch::Approx;

namespace {

MtaeSpec small_spec() {
    MtaeSpec s;
    s.input_dim = 9;
    s.embed_dim = 3;
    s.encoder_hidden = {6};
    s.decoder_hidden = {5};
    s.classifier_hidden = {};
    s.class_count = 3;
    return s;
}

SvddState state_from(Matrix centroids, std::vector<double> radii) {
    SvddState s;
    s.active = true;
    s.centroids = std::move(centroids);
    s.radii = std::move(radii);
    return s;
}

}  // namespace

TEST_CASE("architecture validation") {
    auto s = small_spec();
    CHECK_NOTHROW(Mtae(s));
    s.embed_dim = 1;
    CHECK_THROWS_AS(Mtae(s), ConfigError);
    s = small_spec();
    s.class_count = 1;
    CHECK_THROWS_AS(Mtae(s), ConfigError);
    LossWeights w;
    w.cls = -1.0;
    CHECK_THROWS_AS(w.validate(), ConfigError);
}

TEST_CASE("default architecture matches the desk-scale layout") {
    MtaeSpec s;
    s.input_dim = 64;
    s.class_count = 4;
    const Mtae m(s);
    CHECK(m.encoder().size() == 3);
    CHECK(m.encoder()[0].out_dim == 128);
    CHECK(m.encoder()[2].out_dim == 32);
    CHECK(m.classifier().size() == 1);
    CHECK(m.classifier()[0].out_dim == 4);
    CHECK(m.decoder().back().kind == LayerKind::sigmoid);
    CHECK(m.decoder()[2].out_dim == 64);
}

TEST_CASE("forward shapes and ranges") {
    const Mtae m(small_spec());
    Engine rng(1);
    const auto p = m.init(rng);
    const auto x = test::random_matrix(rng, 7, 9, 0.0, 1.0);
    const std::vector<int> y{0, 1, 2, 0, 1, 2, 0};
    const auto out = mtae_forward(m, p, x, y, LossWeights{});
    CHECK(out.z().rows() == 7);
    CHECK(out.z().cols() == 3);
    for (double v : out.reconstruction().data()) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    for (std::size_t i = 0; i < 7; ++i) {
        const auto [a, b] = out.losses.loss_point_2d[i];
        CHECK(out.losses.weighted_sum[i] == a + b);
        CHECK(a >= 0.0);
        CHECK(b >= 0.0);
    }
    CHECK(embed(m, p, x) == out.z());
    CHECK(embed(m, p, x) == embed(m, p, x));
    CHECK_THROWS_AS(mtae_forward(m, p, x, std::vector<int>{0, 1, 2, 0, 1, 2, 3}, LossWeights{}), InputError);
}

TEST_CASE("sample losses arithmetic") {
    LossWeights w;
    const auto s = make_sample_losses({0.2}, {2.0}, w);
    CHECK(s.weighted_sum[0] == Approx(0.3).epsilon(1e-15));

    LossWeights nocls{1.0, 0.0, 0.0};
    const auto t = make_sample_losses({0.2, 0.7}, {2.0, 5.0}, nocls);
    CHECK(t.weighted_sum == t.rec);

    CHECK(combined_loss(make_sample_losses({0, 0}, {0, 0}, w), w) == 0.0);
    const auto one = make_sample_losses({0.25}, {std::log(10.0)}, w);
    CHECK(combined_loss(one, w) == Approx(0.25 + 0.05 * std::log(10.0)).epsilon(1e-15));
    CHECK(combined_loss(one, w) == Approx(0.365129).margin(1e-6));

    LossWeights twice = w;
    twice.rec = 2.0;
    CHECK(combined_loss(one, twice) - combined_loss(one, w) == Approx(0.25).epsilon(1e-14));
}

TEST_CASE("combined loss ignores sample order") {
    LossWeights w;
    const auto a = make_sample_losses({0.1, 0.4, 0.3}, {1.0, 0.2, 2.5}, w);
    const auto b = make_sample_losses({0.3, 0.1, 0.4}, {2.5, 1.0, 0.2}, w);
    CHECK(combined_loss(a, w) == Approx(combined_loss(b, w)).epsilon(1e-15));
}

TEST_CASE("perfect reconstruction has zero reconstruction loss") {
    // A decoder whose output layer is a pure bias of logit(x) reproduces x exactly.
    MtaeSpec s = small_spec();
    s.decoder_hidden = {};
    const Mtae m(s);
    Engine rng(2);
    auto p = m.init(rng);
    const auto x = test::random_matrix(rng, 1, 9, 0.2, 0.8);
    const std::size_t out_layer = 2 * dense_count(m.encoder());
    auto& w = p[out_layer];
    auto& b = p[out_layer + 1];
    std::fill(w.values.begin(), w.values.end(), 0.0);
    for (std::size_t i = 0; i < 9; ++i) b.values[i] = std::log(x(0, i) / (1.0 - x(0, i)));
    const auto out = mtae_forward(m, p, x, std::vector<int>{1}, LossWeights{});
    CHECK(out.losses.rec[0] == Approx(0.0).margin(1e-20));
}

TEST_CASE("svdd regularizer closed forms") {
    SECTION("all inside spheres") {
        const auto st = state_from(test::mat(2, 2, {0, 0, 5, 5}), {1.0, 2.0});
        const auto z = test::mat(2, 2, {0.1, 0.1, 5.5, 5.0});
        const auto r = svdd_reg_loss(z, std::vector<int>{0, 1}, st);
        REQUIRE(r);
        CHECK(r->value == Approx((1.0 + 4.0) / 2.0).epsilon(1e-15));
        for (double v : r->grad.data()) CHECK(v == 0.0);
    }
    SECTION("single class, one point outside") {
        const auto st = state_from(test::mat(1, 2, {0, 0}), {1.0});
        const auto z = test::mat(1, 2, {1, 2});  // squared distance 5
        const auto r = svdd_reg_loss(z, std::vector<int>{0}, st);
        CHECK(r->value == Approx(5.0).epsilon(1e-15));
        CHECK(r->grad(0, 0) == Approx(2.0).epsilon(1e-15));
        CHECK(r->grad(0, 1) == Approx(4.0).epsilon(1e-15));
    }
    SECTION("inactive state signals skip") {
        SvddState st;
        CHECK_FALSE(svdd_reg_loss(Matrix(1, 2), std::vector<int>{0}, st).has_value());
    }
}

TEST_CASE("svdd regularizer bounds and gradient") {
    for (std::uint64_t seed = 0; seed < 8; ++seed) {
        Engine rng(seed);
        const auto centroids = test::random_matrix(rng, 3, 4);
        const auto st = state_from(centroids, {0.3, 0.8, 1.2});
        const auto z = test::random_matrix(rng, 10, 4, -2, 2);
        std::vector<int> y(10);
        for (auto& v : y) v = static_cast<int>(uniform_index(rng, 3));
        const auto r = svdd_reg_loss(z, y, st);
        CHECK(r->value >= (0.09 + 0.64 + 1.44) / 3.0 - 1e-15);

        bool near_kink = false;
        for (std::size_t i = 0; i < 10; ++i) {
            double d2 = 0.0;
            for (std::size_t c = 0; c < 4; ++c) d2 += std::pow(z(i, c) - centroids(y[i], c), 2);
            near_kink |= std::abs(d2 - std::pow(st.radii[y[i]], 2)) < 1e-6;
        }
        if (near_kink) continue;
        ParamSet p{{{10, 4}, z.data(), ParamRole::weight}};
        ParamSet g{{{10, 4}, r->grad.data(), ParamRole::weight}};
        auto loss = [&](const ParamSet& q) { return svdd_reg_loss(Matrix(10, 4, q[0].values), y, st)->value; };
        CAPTURE(seed);
        CHECK(test::finite_difference_check(p, g, loss).max_rel_error < 1e-4);
    }
}

TEST_CASE("full objective gradient matches finite differences") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Engine rng(100 + seed);
        MtaeSpec s = small_spec();
        s.classifier_hidden = {4};
        const Mtae m(s);
        const auto p = m.init(rng);
        const auto x = test::random_matrix(rng, 6, 9, 0.0, 1.0);
        const std::vector<int> y{0, 1, 2, 2, 1, 0};
        LossWeights w{1.0, 0.05, 0.1};
        const auto z = embed(m, p, x);
        auto st = state_from(compute_centroids(z, y, 3), {0.01, 0.02, 0.03});
        const auto g = mtae_loss_and_grad(m, p, x, y, w, &st);
        auto loss = [&](const ParamSet& q) { return mtae_loss_and_grad(m, q, x, y, w, &st).loss; };
        CAPTURE(seed);
        CHECK(test::finite_difference_check(p, g.grads, loss).max_rel_error < 1e-4);
    }
}
