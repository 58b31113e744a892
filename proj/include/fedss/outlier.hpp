#pragma once

// Server-side unsupervised outlier detectors: a nu-parameterised one-class SVM
// with an RBF kernel, solved by pairwise SMO, and an isolation forest. Both
// standardise their fit data per coordinate and reuse that scaling when
// scoring.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "fedss/error.hpp"
#include "fedss/matrix.hpp"
#include "fedss/rng.hpp"

namespace fedss {

struct Standardizer {
    std::vector<double> mean;
    std::vector<double> scale;

    static Standardizer fit(const Matrix& x) {
        Standardizer s;
        const std::size_t n = x.rows(), d = x.cols();
        s.mean.assign(d, 0.0);
        s.scale.assign(d, 1.0);
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < d; ++c) s.mean[c] += x(r, c);
        for (auto& m : s.mean) m /= static_cast<double>(n);
        for (std::size_t c = 0; c < d; ++c) {
            double var = 0.0;
            for (std::size_t r = 0; r < n; ++r) var += (x(r, c) - s.mean[c]) * (x(r, c) - s.mean[c]);
            const double sd = std::sqrt(var / static_cast<double>(n));
            s.scale[c] = sd > 1e-12 ? sd : 1.0;
        }
        return s;
    }

    std::vector<double> apply(std::span<const double> p) const {
        if (p.size() != mean.size()) throw InputError("point dimension does not match fitted detector");
        std::vector<double> out(p.size());
        for (std::size_t c = 0; c < p.size(); ++c) out[c] = (p[c] - mean[c]) / scale[c];
        return out;
    }

    Matrix apply(const Matrix& x) const {
        Matrix out(x.rows(), x.cols());
        for (std::size_t r = 0; r < x.rows(); ++r) {
            auto v = apply(x.row(r));
            std::copy(v.begin(), v.end(), out.row(r).begin());
        }
        return out;
    }
};

struct OutlierVerdict {
    std::vector<double> scores;
    std::vector<std::uint8_t> is_outlier;

    std::size_t outlier_count() const {
        return static_cast<std::size_t>(std::count(is_outlier.begin(), is_outlier.end(), std::uint8_t{1}));
    }
};

// ---------------------------------------------------------------------------
// One-class SVM
// ---------------------------------------------------------------------------

struct OcsvmModel {
    Standardizer scaler;
    Matrix support_vectors;     // standardised coordinates
    std::vector<double> coef;   // alpha_i of each support vector
    std::vector<double> alpha;  // full dual solution over the fit set
    double rho = 0.0;
    double gamma = 0.0;
    double nu = 0.0;
    std::size_t iterations = 0;
    double violation = 0.0;     // max KKT violation at exit
};

inline double rbf(std::span<const double> a, std::span<const double> b, double gamma) {
    double d2 = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) d2 += (a[i] - b[i]) * (a[i] - b[i]);
    return std::exp(-gamma * d2);
}

/// Mean per-coordinate variance heuristic: gamma = 1 / (d * var).
inline double default_gamma(const Matrix& standardized) {
    const std::size_t n = standardized.rows(), d = standardized.cols();
    double total = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
        double m = 0.0, v = 0.0;
        for (std::size_t r = 0; r < n; ++r) m += standardized(r, c);
        m /= static_cast<double>(n);
        for (std::size_t r = 0; r < n; ++r) v += (standardized(r, c) - m) * (standardized(r, c) - m);
        total += v / static_cast<double>(n);
    }
    const double var = total / static_cast<double>(d);
    return var > 1e-12 ? 1.0 / (static_cast<double>(d) * var) : 1.0 / static_cast<double>(d);
}

struct OcsvmParams {
    double nu = 0.4;
    std::optional<double> gamma;  // default_gamma when empty
    double tol = 1e-4;
    std::size_t max_iter_per_point = 200;
};

namespace detail {

/// Kernel columns, precomputed for small problems and evaluated on demand
/// otherwise.
class KernelColumns {
public:
    KernelColumns(const Matrix& x, double gamma) : x_(x), gamma_(gamma), n_(x.rows()) {
        if (n_ <= kFullLimit) {
            full_.resize(n_ * n_);
            for (std::size_t i = 0; i < n_; ++i) {
                full_[i * n_ + i] = 1.0;
                for (std::size_t j = 0; j < i; ++j)
                    full_[i * n_ + j] = full_[j * n_ + i] = rbf(x.row(i), x.row(j), gamma);
            }
        } else {
            buf_[0].resize(n_);
            buf_[1].resize(n_);
        }
    }

    /// slot selects which scratch buffer an on-demand column lands in.
    std::span<const double> column(std::size_t i, int slot) {
        if (!full_.empty()) return {full_.data() + i * n_, n_};
        auto& b = buf_[slot];
        for (std::size_t t = 0; t < n_; ++t) b[t] = rbf(x_.row(i), x_.row(t), gamma_);
        return b;
    }

private:
    static constexpr std::size_t kFullLimit = 4096;
    const Matrix& x_;
    double gamma_;
    std::size_t n_;
    std::vector<double> full_;
    std::vector<double> buf_[2];
};

}  // namespace detail

/// Solves min 1/2 a^T K a  s.t. 0 <= a_i <= 1/(nu n), sum a_i = 1 with
/// maximal-violating-pair SMO (second-order choice of the second index).
inline OcsvmModel ocsvm_fit(const Matrix& points, const OcsvmParams& params = {}) {
    const std::size_t n = points.rows();
    if (n < 2) throw FitError("ocsvm_fit: need at least 2 points, got " + std::to_string(n));
    if (!(params.nu > 0.0 && params.nu <= 1.0)) throw ConfigError("ocsvm nu must lie in (0, 1]");

    OcsvmModel model;
    model.nu = params.nu;
    model.scaler = Standardizer::fit(points);
    const Matrix x = model.scaler.apply(points);
    model.gamma = params.gamma.value_or(default_gamma(x));
    if (!(model.gamma > 0.0)) throw ConfigError("ocsvm gamma must be positive");

    const double upper = 1.0 / (params.nu * static_cast<double>(n));
    std::vector<double> alpha(n, 0.0);
    {
        // Fill the first points to the box bound until the simplex sum is met.
        double remaining = 1.0;
        for (std::size_t i = 0; i < n && remaining > 0.0; ++i) {
            alpha[i] = std::min(upper, remaining);
            remaining -= alpha[i];
        }
    }

    detail::KernelColumns kernel(x, model.gamma);
    std::vector<double> grad(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        if (alpha[i] == 0.0) continue;
        auto col = kernel.column(i, 0);
        for (std::size_t t = 0; t < n; ++t) grad[t] += alpha[i] * col[t];
    }

    auto at_upper = [&](std::size_t t) { return alpha[t] >= upper; };
    auto at_lower = [&](std::size_t t) { return alpha[t] <= 0.0; };
    constexpr double tau = 1e-12;
    const std::size_t cap = params.max_iter_per_point * n;
    std::size_t iter = 0;
    double violation = 0.0;

    for (;; ++iter) {
        // i: most negative gradient among points that may still grow.
        double gmax = -std::numeric_limits<double>::infinity();
        std::size_t i = n;
        for (std::size_t t = 0; t < n; ++t)
            if (!at_upper(t) && -grad[t] >= gmax) {
                gmax = -grad[t];
                i = t;
            }
        // j: second-order choice among points that may shrink.
        double gmax2 = -std::numeric_limits<double>::infinity();
        std::size_t j = n;
        double best_obj = std::numeric_limits<double>::infinity();
        std::span<const double> qi;
        if (i < n) qi = kernel.column(i, 0);
        for (std::size_t t = 0; t < n; ++t) {
            if (at_lower(t)) continue;
            gmax2 = std::max(gmax2, grad[t]);
            if (i == n) continue;
            const double diff = gmax + grad[t];
            if (diff > 0.0) {
                double quad = 2.0 - 2.0 * qi[t];
                if (quad <= 0.0) quad = tau;
                const double obj = -(diff * diff) / quad;
                if (obj <= best_obj) {
                    best_obj = obj;
                    j = t;
                }
            }
        }
        // Measured on the dual scaled to alpha in [0, 1], sum nu * n, so tol
        // does not shrink with the problem size.
        violation = (gmax + gmax2) * params.nu * static_cast<double>(n);
        if (violation < params.tol || i == n || j == n) break;
        if (iter >= cap)
            throw ConvergenceError("ocsvm_fit: no convergence after " + std::to_string(cap) +
                                       " updates, KKT violation " + std::to_string(violation),
                                   violation);

        auto qj = kernel.column(j, 1);
        double quad = 2.0 - 2.0 * qi[j];
        if (quad <= 0.0) quad = tau;
        const double old_i = alpha[i], old_j = alpha[j];
        const double delta = (grad[i] - grad[j]) / quad;
        const double sum = old_i + old_j;
        alpha[i] -= delta;
        alpha[j] += delta;
        if (sum > upper) {
            if (alpha[i] > upper) {
                alpha[i] = upper;
                alpha[j] = sum - upper;
            }
        } else if (alpha[j] < 0.0) {
            alpha[j] = 0.0;
            alpha[i] = sum;
        }
        if (sum > upper) {
            if (alpha[j] > upper) {
                alpha[j] = upper;
                alpha[i] = sum - upper;
            }
        } else if (alpha[i] < 0.0) {
            alpha[i] = 0.0;
            alpha[j] = sum;
        }
        const double di = alpha[i] - old_i, dj = alpha[j] - old_j;
        for (std::size_t t = 0; t < n; ++t) grad[t] += qi[t] * di + qj[t] * dj;
    }

    // Offset: mean gradient over free vectors, midpoint of the feasible band otherwise.
    double ub = std::numeric_limits<double>::infinity(), lb = -ub, free_sum = 0.0;
    std::size_t free_count = 0;
    for (std::size_t t = 0; t < n; ++t) {
        if (at_upper(t)) lb = std::max(lb, grad[t]);
        else if (at_lower(t)) ub = std::min(ub, grad[t]);
        else {
            ++free_count;
            free_sum += grad[t];
        }
    }
    model.rho = free_count > 0 ? free_sum / static_cast<double>(free_count) : (ub + lb) / 2.0;
    model.iterations = iter;
    model.violation = violation;
    for (std::size_t t = 0; t < n; ++t)
        if (alpha[t] > 0.0) {
            model.support_vectors.append_row(x.row(t));
            model.coef.push_back(alpha[t]);
        }
    model.alpha = std::move(alpha);
    return model;
}

/// sum_i alpha_i K(sv_i, x) - rho; negative means outlier.
inline double ocsvm_decision(const OcsvmModel& model, std::span<const double> point) {
    const auto p = model.scaler.apply(point);
    double acc = 0.0;
    for (std::size_t s = 0; s < model.coef.size(); ++s) acc += model.coef[s] * rbf(model.support_vectors.row(s), p, model.gamma);
    return acc - model.rho;
}

// ---------------------------------------------------------------------------
// Isolation forest
// ---------------------------------------------------------------------------

inline constexpr double kEulerGamma = 0.5772156649;

/// Average unsuccessful-search path length in a BST of m points.
inline double average_path_length(double m) {
    if (m <= 1.0) return 0.0;
    return 2.0 * (std::log(m - 1.0) + kEulerGamma) - 2.0 * (m - 1.0) / m;
}

struct IsolationNode {
    int feature = -1;  // -1 marks a leaf
    double split = 0.0;
    std::size_t left = 0, right = 0;
    std::size_t size = 0;  // samples that reached this node during fitting
};

struct IsolationTree {
    std::vector<IsolationNode> nodes;  // nodes[0] is the root

    double path_length(std::span<const double> p) const {
        std::size_t at = 0;
        double depth = 0.0;
        while (nodes[at].feature >= 0) {
            const auto& nd = nodes[at];
            at = p[static_cast<std::size_t>(nd.feature)] < nd.split ? nd.left : nd.right;
            depth += 1.0;
        }
        return depth + average_path_length(static_cast<double>(nodes[at].size));
    }

    std::size_t height() const {
        std::vector<std::size_t> depth(nodes.size(), 0);
        std::size_t h = 0;
        for (std::size_t i = 0; i < nodes.size(); ++i) {
            h = std::max(h, depth[i]);
            if (nodes[i].feature >= 0) depth[nodes[i].left] = depth[nodes[i].right] = depth[i] + 1;
        }
        return h;
    }
};

struct IforestModel {
    Standardizer scaler;
    std::vector<IsolationTree> trees;
    std::size_t subsample = 0;
    std::size_t height_cap = 0;
    double contamination = 0.0;
    double score_threshold = std::numeric_limits<double>::infinity();
    std::vector<double> training_scores;  // sorted descending
};

struct IforestParams {
    std::size_t trees = 0;      // 0: ceil(sqrt(n))
    std::size_t subsample = 0;  // 0: min(256, n)
    double contamination = 0.4;
};

namespace detail {

inline std::size_t build_isolation_node(IsolationTree& tree, const Matrix& x, std::vector<std::size_t>& idx,
                                        std::size_t begin, std::size_t end, std::size_t depth,
                                        std::size_t cap, Engine& rng) {
    const std::size_t id = tree.nodes.size();
    tree.nodes.push_back({});
    tree.nodes[id].size = end - begin;
    if (end - begin <= 1 || depth >= cap) return id;

    const std::size_t feature = uniform_index(rng, x.cols());
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (std::size_t k = begin; k < end; ++k) {
        lo = std::min(lo, x(idx[k], feature));
        hi = std::max(hi, x(idx[k], feature));
    }
    const double split = lo < hi ? uniform_real(rng, lo, hi) : lo;
    auto mid = std::partition(idx.begin() + static_cast<std::ptrdiff_t>(begin),
                              idx.begin() + static_cast<std::ptrdiff_t>(end),
                              [&](std::size_t r) { return x(r, feature) < split; });
    const auto m = static_cast<std::size_t>(mid - idx.begin());
    const std::size_t left = build_isolation_node(tree, x, idx, begin, m, depth + 1, cap, rng);
    const std::size_t right = build_isolation_node(tree, x, idx, m, end, depth + 1, cap, rng);
    auto& nd = tree.nodes[id];
    nd.feature = static_cast<int>(feature);
    nd.split = split;
    nd.left = left;
    nd.right = right;
    return id;
}

inline double iforest_score_standardized(const IforestModel& model, std::span<const double> p) {
    double total = 0.0;
    for (const auto& t : model.trees) total += t.path_length(p);
    const double mean = total / static_cast<double>(model.trees.size());
    return std::pow(2.0, -mean / average_path_length(static_cast<double>(model.subsample)));
}

}  // namespace detail

inline std::size_t default_tree_count(std::size_t n) {
    return static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n))));
}

/// Score threshold flagging the top `contamination` share of the cached
/// training scores; +inf when that share rounds to zero points.
inline double iforest_threshold(const IforestModel& model, double contamination) {
    const auto count = static_cast<std::size_t>(
        std::floor(contamination * static_cast<double>(model.training_scores.size()) + 0.5));
    if (count == 0) return std::numeric_limits<double>::infinity();
    return model.training_scores[std::min(count, model.training_scores.size()) - 1];
}

inline IforestModel iforest_fit(const Matrix& points, const IforestParams& params, std::uint64_t seed) {
    const std::size_t n = points.rows();
    if (n < 2) throw FitError("iforest_fit: need at least 2 points, got " + std::to_string(n));
    if (!(params.contamination >= 0.0 && params.contamination <= 1.0))
        throw ConfigError("iforest contamination must lie in [0, 1]");

    IforestModel model;
    model.scaler = Standardizer::fit(points);
    const Matrix x = model.scaler.apply(points);
    model.subsample = params.subsample == 0 ? std::min<std::size_t>(256, n) : std::min(params.subsample, n);
    if (model.subsample < 2) throw ConfigError("iforest subsample must be at least 2");
    model.height_cap = static_cast<std::size_t>(std::ceil(std::log2(static_cast<double>(model.subsample))));
    model.contamination = params.contamination;
    const std::size_t tree_count = params.trees == 0 ? default_tree_count(n) : params.trees;

    auto rng = stream(seed, "iforest");
    model.trees.reserve(tree_count);
    for (std::size_t t = 0; t < tree_count; ++t) {
        auto idx = sample_without_replacement(rng, n, model.subsample);
        IsolationTree tree;
        detail::build_isolation_node(tree, x, idx, 0, idx.size(), 0, model.height_cap, rng);
        model.trees.push_back(std::move(tree));
    }

    model.training_scores.reserve(n);
    for (std::size_t r = 0; r < n; ++r) model.training_scores.push_back(detail::iforest_score_standardized(model, x.row(r)));
    std::sort(model.training_scores.begin(), model.training_scores.end(), std::greater<>());
    model.score_threshold = iforest_threshold(model, model.contamination);
    return model;
}

/// 2^(-E(h) / c(psi)), in (0, 1); higher is more anomalous.
inline double iforest_score(const IforestModel& model, std::span<const double> point) {
    return detail::iforest_score_standardized(model, model.scaler.apply(point));
}

// ---------------------------------------------------------------------------
// Common contract
// ---------------------------------------------------------------------------

using OutlierModel = std::variant<OcsvmModel, IforestModel>;

enum class DetectorKind { ocsvm, iforest };

struct DetectorParams {
    double contamination = 0.4;  // OCSVM nu or IF score quantile
    std::optional<double> gamma;
    double tol = 1e-4;
    std::size_t trees = 0;
    std::size_t subsample = 0;
};

inline OutlierModel fit_detector(DetectorKind kind, const Matrix& points, const DetectorParams& p,
                                 std::uint64_t seed) {
    if (kind == DetectorKind::ocsvm) {
        OcsvmParams op;
        op.nu = p.contamination;
        op.gamma = p.gamma;
        op.tol = p.tol;
        return ocsvm_fit(points, op);
    }
    return iforest_fit(points, {p.trees, p.subsample, p.contamination}, seed);
}

/// OCSVM flags decision < 0 (nu already encodes the contamination). IF flags
/// scores at or above the contamination quantile of its training scores.
inline OutlierVerdict predict_outliers(const OutlierModel& model, const Matrix& points, double contamination) {
    OutlierVerdict v;
    v.scores.reserve(points.rows());
    v.is_outlier.reserve(points.rows());
    if (const auto* svm = std::get_if<OcsvmModel>(&model)) {
        for (std::size_t r = 0; r < points.rows(); ++r) {
            const double s = ocsvm_decision(*svm, points.row(r));
            v.scores.push_back(s);
            v.is_outlier.push_back(s < 0.0);
        }
    } else {
        const auto& forest = std::get<IforestModel>(model);
        const double threshold = iforest_threshold(forest, contamination);
        for (std::size_t r = 0; r < points.rows(); ++r) {
            const double s = iforest_score(forest, points.row(r));
            v.scores.push_back(s);
            v.is_outlier.push_back(s >= threshold);
        }
    }
    return v;
}

}  // namespace fedss
