#pragma once

// Shared oracles for the test suite.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "fedss/matrix.hpp"
#include "fedss/nn.hpp"
#include "fedss/rng.hpp"

namespace fedss::test {

inline Matrix mat(std::size_t rows, std::size_t cols, std::vector<double> v) {
    return Matrix(rows, cols, std::move(v));
}

inline Matrix random_matrix(Engine& rng, std::size_t rows, std::size_t cols, double lo = -1.0, double hi = 1.0) {
    Matrix m(rows, cols);
    for (auto& v : m.data()) v = uniform_real(rng, lo, hi);
    return m;
}

struct GradCheck {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
};

/// Central differences of `loss` against `analytic`, perturbing every entry
/// of every tensor. Relative error uses max(|a|, |n|, floor) as denominator
/// so that entries whose true gradient is ~0 are judged on absolute error.
inline GradCheck finite_difference_check(ParamSet params, const ParamSet& analytic,
                                         const std::function<double(const ParamSet&)>& loss, double eps = 1e-5,
                                         double floor = 1e-6) {
    GradCheck out;
    for (std::size_t t = 0; t < params.size(); ++t) {
        for (std::size_t i = 0; i < params[t].values.size(); ++i) {
            const double keep = params[t].values[i];
            params[t].values[i] = keep + eps;
            const double up = loss(params);
            params[t].values[i] = keep - eps;
            const double down = loss(params);
            params[t].values[i] = keep;
            const double numeric = (up - down) / (2.0 * eps);
            const double a = analytic[t].values[i];
            const double denom = std::max({std::abs(a), std::abs(numeric), floor});
            out.max_rel_error = std::max(out.max_rel_error, std::abs(a - numeric) / denom);
            ++out.checked;
        }
    }
    return out;
}

}  // namespace fedss::test
