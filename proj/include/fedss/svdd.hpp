#pragma once

// Federated multi-class SVDD bookkeeping.
//
// The server derives one centroid per class from embeddings of a public test
// set, then keeps per-class radii up to date from the L2 distances clients
// report after local training. A radius is the nearest-rank (1 - nu) quantile
// of the distances reported for its class.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fedss/error.hpp"
#include "fedss/matrix.hpp"

namespace fedss {

struct SvddState {
    bool active = false;
    Matrix centroids;            // k x embed_dim
    std::vector<double> radii;   // L2 units, one per class
    double nu = 0.4;
    std::size_t activation_round = 500;
    bool recenter = false;       // recompute centroids on every call after activation
};

/// Per-class lists of ||z_j - mu_{y_j}|| for the samples a client holds.
struct DistanceReport {
    std::vector<std::vector<double>> per_class;

    std::size_t total() const {
        std::size_t n = 0;
        for (const auto& c : per_class) n += c.size();
        return n;
    }
};

inline double l2_distance(std::span<const double> a, std::span<const double> b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        acc += d * d;
    }
    return std::sqrt(acc);
}

inline Matrix compute_centroids(const Matrix& z, std::span<const int> labels, std::size_t class_count) {
    if (labels.size() != z.rows()) throw ProtocolError("compute_centroids: label count mismatch");
    Matrix mu(class_count, z.cols());
    std::vector<std::size_t> counts(class_count, 0);
    for (std::size_t r = 0; r < z.rows(); ++r) {
        const int y = labels[r];
        if (y < 0 || static_cast<std::size_t>(y) >= class_count)
            throw InputError("compute_centroids: label " + std::to_string(y) + " out of range");
        ++counts[y];
        auto zr = z.row(r);
        for (std::size_t c = 0; c < z.cols(); ++c) mu(y, c) += zr[c];
    }
    for (std::size_t k = 0; k < class_count; ++k) {
        if (counts[k] == 0)
            throw ProtocolError("compute_centroids: class " + std::to_string(k) +
                                " has no samples in the server test set");
        for (std::size_t c = 0; c < z.cols(); ++c) mu(k, c) /= static_cast<double>(counts[k]);
    }
    return mu;
}

inline DistanceReport client_distances(const Matrix& z, std::span<const int> labels,
                                       const Matrix& centroids) {
    if (labels.size() != z.rows()) throw ProtocolError("client_distances: label count mismatch");
    if (z.rows() > 0 && z.cols() != centroids.cols())
        throw ProtocolError("client_distances: embedding width does not match centroids");
    DistanceReport report;
    report.per_class.resize(centroids.rows());
    for (std::size_t r = 0; r < z.rows(); ++r) {
        const int y = labels[r];
        if (y < 0 || static_cast<std::size_t>(y) >= centroids.rows())
            throw InputError("client_distances: label " + std::to_string(y) + " out of range");
        report.per_class[y].push_back(l2_distance(z.row(r), centroids.row(y)));
    }
    return report;
}

/// Concatenates reports class by class. Radii are computed after sorting, so
/// the merge order never matters.
inline DistanceReport merge_reports(std::span<const DistanceReport> reports, std::size_t class_count) {
    DistanceReport merged;
    merged.per_class.resize(class_count);
    for (const auto& r : reports) {
        if (r.per_class.size() != class_count) throw ProtocolError("distance report has wrong class count");
        for (std::size_t k = 0; k < class_count; ++k)
            merged.per_class[k].insert(merged.per_class[k].end(), r.per_class[k].begin(), r.per_class[k].end());
    }
    return merged;
}

/// Nearest-rank quantile: the element at 1-based rank ceil(q * n) of the sorted
/// values, rank clamped to [1, n].
inline double nearest_rank_quantile(std::vector<double> values, double q) {
    if (values.empty()) throw ProtocolError("quantile of an empty list");
    std::sort(values.begin(), values.end());
    const double n = static_cast<double>(values.size());
    // 1e-9 absorbs representation error, e.g. (1 - 0.4) * 10 must give rank 6.
    auto rank = static_cast<std::ptrdiff_t>(std::ceil(q * n - 1e-9));
    rank = std::clamp<std::ptrdiff_t>(rank, 1, static_cast<std::ptrdiff_t>(values.size()));
    return values[static_cast<std::size_t>(rank - 1)];
}

/// Classes with no reported distance keep their previous radius.
inline std::vector<double> update_radii(const DistanceReport& merged, double nu,
                                        std::vector<double> current) {
    if (!(nu > 0.0 && nu < 1.0)) throw ConfigError("svdd nu must lie in (0, 1)");
    current.resize(merged.per_class.size(), 0.0);
    const double q = 1.0 - nu;
    for (std::size_t k = 0; k < merged.per_class.size(); ++k)
        if (!merged.per_class[k].empty()) current[k] = nearest_rank_quantile(merged.per_class[k], q);
    return current;
}

/// Engages the regularizer once `round` reaches the activation round.
/// `test_embeddings` is called lazily and must return the server test set's
/// embeddings under the current global model together with its labels.
template <class EmbedFn>
void maybe_activate(SvddState& state, std::size_t round, std::size_t class_count, EmbedFn&& test_embeddings) {
    if (round < state.activation_round) return;
    if (state.active && !state.recenter) return;
    const auto& [z, labels] = test_embeddings();
    state.centroids = compute_centroids(z, labels, class_count);
    const auto report = client_distances(z, labels, state.centroids);
    state.radii = update_radii(report, state.nu, std::vector<double>(class_count, 0.0));
    state.active = true;
}

}  // namespace fedss
