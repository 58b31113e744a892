#include <catch_amalgamated.hpp>

#include <algorithm>

#include "fedss/svdd.hpp"
#include "support.hpp"

using namespace fedss;
using Catch::Approx;

TEST_CASE("centroids") {
    const auto c = compute_centroids(test::mat(3, 2, {0, 0, 2, 2, 5, 7}), std::vector<int>{0, 0, 1}, 2);
    CHECK(c(0, 0) == 1.0);
    CHECK(c(0, 1) == 1.0);
    CHECK(c(1, 0) == 5.0);
    CHECK(c(1, 1) == 7.0);

    const auto p = compute_centroids(test::mat(3, 2, {5, 7, 2, 2, 0, 0}), std::vector<int>{1, 0, 0}, 2);
    CHECK(p == c);

    try {
        compute_centroids(test::mat(2, 1, {1, 2}), std::vector<int>{0, 0}, 3);
        FAIL("expected an error");
    } catch (const ProtocolError& e) {
        CHECK(std::string(e.what()).find('1') != std::string::npos);
    }
}

TEST_CASE("client distances") {
    const auto mu = test::mat(2, 2, {0, 0, 1, 1});
    const auto r = client_distances(test::mat(3, 2, {3, 4, 1, 1, 0, 0}), std::vector<int>{0, 1, 0}, mu);
    CHECK(r.per_class[0] == std::vector<double>{5.0, 0.0});
    CHECK(r.per_class[1] == std::vector<double>{0.0});
    CHECK(r.total() == 3);
}

TEST_CASE("nearest-rank radii") {
    DistanceReport rep;
    rep.per_class = {{10, 9, 8, 7, 6, 5, 4, 3, 2, 1}, {2.5}, {}};
    const auto radii = update_radii(rep, 0.4, {0.0, 0.0, 3.0});
    CHECK(radii[0] == 6.0);
    CHECK(radii[1] == 2.5);
    CHECK(radii[2] == 3.0);
    CHECK(update_radii(rep, 1e-9, {})[0] == 10.0);
    CHECK(update_radii(rep, 0.99, {})[1] == 2.5);
    CHECK_THROWS_AS(update_radii(rep, 1.0, {}), ConfigError);
}

TEST_CASE("radius quantile guarantees") {
    Engine rng(6);
    for (int trial = 0; trial < 30; ++trial) {
        DistanceReport rep;
        rep.per_class.resize(1);
        const std::size_t n = 1 + uniform_index(rng, 60);
        for (std::size_t i = 0; i < n; ++i) rep.per_class[0].push_back(uniform_real(rng, 0, 5));
        double prev = 1e300;
        for (double nu : {0.05, 0.1, 0.25, 0.4, 0.5, 0.75, 0.95}) {
            const double r = update_radii(rep, nu, {})[0];
            const auto above = std::count_if(rep.per_class[0].begin(), rep.per_class[0].end(), [&](double d) { return d > r; });
            CHECK(static_cast<double>(above) / static_cast<double>(n) <= nu + 1.0 / static_cast<double>(n) + 1e-12);
            CHECK(r <= prev);
            prev = r;
        }
    }
}

TEST_CASE("merge order does not change radii") {
    DistanceReport a, b, c;
    a.per_class = {{1, 5}, {2}};
    b.per_class = {{3}, {}};
    c.per_class = {{4, 0.5}, {7, 1}};
    const std::vector<DistanceReport> one{a, b, c}, two{c, a, b};
    CHECK(update_radii(merge_reports(one, 2), 0.4, {}) == update_radii(merge_reports(two, 2), 0.4, {}));
    CHECK(merge_reports(one, 2).total() == 8);
}

TEST_CASE("activation") {
    SvddState st;
    st.activation_round = 3;
    int calls = 0;
    auto embed = [&] {
        ++calls;
        return std::make_pair(test::mat(4, 2, {0, 0, 2, 0, 10, 10, 10, 12}), std::vector<int>{0, 0, 1, 1});
    };
    maybe_activate(st, 2, 2, embed);
    CHECK_FALSE(st.active);
    CHECK(st.centroids.rows() == 0);
    maybe_activate(st, 3, 2, embed);
    CHECK(st.active);
    CHECK(st.radii == std::vector<double>{1.0, 1.0});
    CHECK(st.centroids(1, 1) == 11.0);
    maybe_activate(st, 4, 2, embed);
    CHECK(calls == 1);
    st.recenter = true;
    maybe_activate(st, 5, 2, embed);
    CHECK(calls == 2);
}
