#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>

#include "fedss/metrics.hpp"
#include "support.hpp"

using namespace fedss;
using Catch::Approx;

TEST_CASE("classification metrics hand cases") {
    const std::vector<int> y{0, 1, 2, 1};
    const auto perfect = classification_metrics(y, y, 3);
    CHECK(perfect.accuracy == 1.0);
    CHECK(perfect.macro_precision == 1.0);
    CHECK(perfect.macro_recall == 1.0);
    CHECK(perfect.macro_f1 == 1.0);

    // class 0: TP 1, FP 1; class 1: TP 1, FN 1
    const auto m = classification_metrics(std::vector<int>{0, 0, 1}, std::vector<int>{0, 1, 1}, 2);
    CHECK(m.macro_precision == 0.75);
    CHECK(m.macro_recall == 0.75);
    CHECK(m.macro_f1 == Approx(2.0 / 3.0).epsilon(1e-15));

    const auto one = classification_metrics(std::vector<int>{0, 0, 0, 0}, std::vector<int>{0, 0, 1, 1}, 2);
    CHECK(one.accuracy == 0.5);
    CHECK(one.macro_f1 == Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("macro f1 lies between the per-class extremes") {
    Engine rng(2);
    for (int trial = 0; trial < 40; ++trial) {
        std::vector<int> p(30), y(30);
        for (auto& v : p) v = static_cast<int>(uniform_index(rng, 4));
        for (auto& v : y) v = static_cast<int>(uniform_index(rng, 4));
        const auto m = classification_metrics(p, y, 4);
        CHECK(m.macro_f1 <= *std::max_element(m.f1.begin(), m.f1.end()) + 1e-15);
        CHECK(m.macro_f1 >= *std::min_element(m.f1.begin(), m.f1.end()) - 1e-15);
        for (double v : {m.accuracy, m.macro_precision, m.macro_recall, m.macro_f1}) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
    }
}

TEST_CASE("psnr") {
    const std::vector<double> x{0.1, 0.5, 0.9};
    CHECK(psnr(x, x) == 120.0);
    CHECK(psnr_from_mse(0.25) == Approx(6.0206).margin(1e-4));
    CHECK(psnr_from_mse(0.01) == Approx(20.0).epsilon(1e-14));
    double prev = 1e9;
    for (double mse = 1e-10; mse < 1.0; mse *= 3.0) {
        CHECK(psnr_from_mse(mse) < prev);
        prev = psnr_from_mse(mse);
    }
}

TEST_CASE("ssim") {
    Engine rng(3);
    const auto a = test::random_matrix(rng, 1, 144, 0, 1);
    const auto b = test::random_matrix(rng, 1, 144, 0, 1);
    CHECK(ssim(a.row(0), a.row(0), 12, 12) == 1.0);
    CHECK(ssim(a.row(0), b.row(0), 12, 12) == Approx(ssim(b.row(0), a.row(0), 12, 12)).epsilon(1e-15));
    CHECK(ssim(a.row(0), b.row(0), 12, 12) < 1.0);

    const std::vector<double> zero(64, 0.0), one(64, 1.0);
    const double c1 = 1e-4;
    CHECK(ssim(zero, one, 8, 8) == Approx(c1 / (1.0 + c1)).epsilon(1e-12));

    // Small images use one whole-image window.
    const auto s = test::random_matrix(rng, 2, 16, 0, 1);
    CHECK(ssim(s.row(0), s.row(0), 4, 4) == 1.0);
    CHECK(ssim_batch(s, s, 4, 4) == 1.0);
    CHECK_THROWS_AS(ssim(s.row(0), s.row(1), 3, 3), InputError);
}

TEST_CASE("ssim sliding window oracle") {
    // Direct evaluation of every 8x8 window on a 9x10 image: 2 x 3 windows.
    Engine rng(5);
    const auto a = test::random_matrix(rng, 1, 90, 0, 1), b = test::random_matrix(rng, 1, 90, 0, 1);
    double total = 0.0;
    int windows = 0;
    for (int r0 = 0; r0 + 8 <= 9; ++r0)
        for (int c0 = 0; c0 + 8 <= 10; ++c0) {
            std::vector<double> xs, ys;
            for (int r = r0; r < r0 + 8; ++r)
                for (int c = c0; c < c0 + 8; ++c) {
                    xs.push_back(a(0, r * 10 + c));
                    ys.push_back(b(0, r * 10 + c));
                }
            double mx = 0, my = 0;
            for (int i = 0; i < 64; ++i) mx += xs[i] / 64, my += ys[i] / 64;
            double vx = 0, vy = 0, cxy = 0;
            for (int i = 0; i < 64; ++i) {
                vx += (xs[i] - mx) * (xs[i] - mx) / 64;
                vy += (ys[i] - my) * (ys[i] - my) / 64;
                cxy += (xs[i] - mx) * (ys[i] - my) / 64;
            }
            total += ((2 * mx * my + 1e-4) * (2 * cxy + 9e-4)) / ((mx * mx + my * my + 1e-4) * (vx + vy + 9e-4));
            ++windows;
        }
    CHECK(windows == 6);
    CHECK(ssim(a.row(0), b.row(0), 9, 10) == Approx(total / windows).epsilon(1e-10));
}

TEST_CASE("best round tracking") {
    auto rec = [](std::size_t round, double acc) {
        MetricRecord m;
        m.round = round;
        m.accuracy = acc;
        return m;
    };
    BestRoundTracker t;
    t = best_round_update(t, rec(10, 0.5));
    CHECK(t.best->round == 10);
    t = best_round_update(t, rec(20, 0.7));
    t = best_round_update(t, rec(30, 0.6));
    CHECK(t.best->round == 20);
    t = best_round_update(t, rec(40, 0.7));
    CHECK(t.best->round == 20);
}
