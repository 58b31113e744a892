#pragma once

// Minimal dense network engine: dense/ReLU/sigmoid layers, per-sample MSE and
// softmax cross-entropy, plain SGD with weight decay.
//
// Conventions
//   * dense layers compute y = x W^T + b with W stored [out x in] row-major;
//   * losses are means over the batch and their gradients are already divided
//     by the batch size;
//   * weight decay touches weight tensors only, never biases.

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "fedss/error.hpp"
#include "fedss/matrix.hpp"
#include "fedss/rng.hpp"

namespace fedss {

enum class ParamRole { weight, bias };

struct ParamTensor {
    std::vector<std::size_t> shape;
    std::vector<double> values;
    ParamRole role = ParamRole::weight;

    std::size_t count() const {
        return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                               std::multiplies<>());
    }

    friend bool operator==(const ParamTensor&, const ParamTensor&) = default;
};

using ParamSet = std::vector<ParamTensor>;

enum class LayerKind { dense, relu, sigmoid };

struct LayerSpec {
    LayerKind kind = LayerKind::dense;
    std::size_t in_dim = 0;
    std::size_t out_dim = 0;

    static LayerSpec dense(std::size_t in, std::size_t out) { return {LayerKind::dense, in, out}; }
    static LayerSpec relu() { return {LayerKind::relu, 0, 0}; }
    static LayerSpec sigmoid() { return {LayerKind::sigmoid, 0, 0}; }
};

struct SgdConfig {
    double learning_rate = 0.1;
    double weight_decay = 0.001;
    std::size_t batch_size = 64;
    std::size_t local_epochs = 5;

    void validate() const {
        if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
            throw ConfigError("sgd.learning_rate must be positive");
        if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay))
            throw ConfigError("sgd.weight_decay must be nonnegative");
        if (batch_size < 1) throw ConfigError("sgd.batch_size must be at least 1");
    }

    friend bool operator==(const SgdConfig&, const SgdConfig&) = default;
};

/// Input width of the stack and its output width, checking that consecutive
/// dense layers line up. A stack of activations only reports {0, 0}.
inline std::pair<std::size_t, std::size_t> layer_dims(std::span<const LayerSpec> layers) {
    std::size_t in = 0, cur = 0;
    bool seen = false;
    for (const auto& l : layers) {
        if (l.kind != LayerKind::dense) continue;
        if (l.in_dim == 0 || l.out_dim == 0) throw ConfigError("dense layer with zero dimension");
        if (!seen) {
            in = l.in_dim;
            seen = true;
        } else if (l.in_dim != cur) {
            throw ConfigError("dense layer expects " + std::to_string(l.in_dim) +
                              " inputs but previous layer produces " + std::to_string(cur));
        }
        cur = l.out_dim;
    }
    return {in, cur};
}

inline std::size_t dense_count(std::span<const LayerSpec> layers) {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.kind == LayerKind::dense;
    return n;
}

/// Two tensors (W, b) per dense layer. W ~ U(-s, s), s = sqrt(6 / (in + out)).
inline ParamSet init_params(std::span<const LayerSpec> layers, Engine& rng) {
    layer_dims(layers);
    ParamSet params;
    for (const auto& l : layers) {
        if (l.kind != LayerKind::dense) continue;
        const double s = std::sqrt(6.0 / static_cast<double>(l.in_dim + l.out_dim));
        ParamTensor w{{l.out_dim, l.in_dim}, std::vector<double>(l.out_dim * l.in_dim), ParamRole::weight};
        for (auto& v : w.values) v = uniform_real(rng, -s, s);
        params.push_back(std::move(w));
        params.push_back({{l.out_dim}, std::vector<double>(l.out_dim, 0.0), ParamRole::bias});
    }
    return params;
}

/// activations[0] is the input, activations[i + 1] the output of layer i.
struct Trace {
    std::vector<Matrix> activations;

    const Matrix& output() const { return activations.back(); }
};

inline double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline Trace forward(std::span<const LayerSpec> layers, std::span<const ParamTensor> params,
                     const Matrix& batch) {
    const auto [in_dim, out_dim] = layer_dims(layers);
    (void)out_dim;
    if (in_dim != 0 && batch.cols() != in_dim)
        throw ConfigError("batch has " + std::to_string(batch.cols()) + " columns, network expects " +
                          std::to_string(in_dim));
    if (params.size() != 2 * dense_count(layers))
        throw ConfigError("parameter count does not match layer stack");

    Trace trace;
    trace.activations.reserve(layers.size() + 1);
    trace.activations.push_back(batch);
    std::size_t p = 0;
    for (const auto& l : layers) {
        const Matrix& x = trace.activations.back();
        Matrix y;
        switch (l.kind) {
            case LayerKind::dense: {
                const auto& w = params[p].values;
                const auto& b = params[p + 1].values;
                if (params[p].values.size() != l.out_dim * l.in_dim || b.size() != l.out_dim)
                    throw ConfigError("parameter shape does not match dense layer");
                p += 2;
                y = Matrix(x.rows(), l.out_dim);
                for (std::size_t r = 0; r < x.rows(); ++r) {
                    const double* xr = x.row(r).data();
                    double* yr = y.row(r).data();
                    for (std::size_t o = 0; o < l.out_dim; ++o) {
                        const double* wo = w.data() + o * l.in_dim;
                        double acc = b[o];
                        for (std::size_t i = 0; i < l.in_dim; ++i) acc += wo[i] * xr[i];
                        yr[o] = acc;
                    }
                }
                break;
            }
            case LayerKind::relu:
                y = x;
                for (auto& v : y.data()) v = v > 0.0 ? v : 0.0;
                break;
            case LayerKind::sigmoid:
                y = x;
                for (auto& v : y.data()) v = sigmoid(v);
                break;
        }
        trace.activations.push_back(std::move(y));
    }
    return trace;
}

struct BackwardResult {
    ParamSet grads;    // same shapes and order as params
    Matrix input_grad;
};

inline BackwardResult backward(std::span<const LayerSpec> layers, std::span<const ParamTensor> params,
                               const Trace& trace, const Matrix& upstream) {
    if (trace.activations.size() != layers.size() + 1)
        throw ConfigError("trace does not belong to this layer stack");
    if (upstream.rows() != trace.output().rows() || upstream.cols() != trace.output().cols())
        throw ConfigError("upstream gradient shape does not match network output");

    BackwardResult res;
    res.grads.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i)
        res.grads[i] = {params[i].shape, std::vector<double>(params[i].values.size(), 0.0), params[i].role};

    Matrix g = upstream;
    std::size_t p = params.size();
    for (std::size_t li = layers.size(); li-- > 0;) {
        const auto& l = layers[li];
        const Matrix& x = trace.activations[li];
        const Matrix& y = trace.activations[li + 1];
        switch (l.kind) {
            case LayerKind::dense: {
                p -= 2;
                const auto& w = params[p].values;
                auto& dw = res.grads[p].values;
                auto& db = res.grads[p + 1].values;
                Matrix dx(x.rows(), l.in_dim);
                for (std::size_t r = 0; r < x.rows(); ++r) {
                    const double* xr = x.row(r).data();
                    const double* gr = g.row(r).data();
                    double* dxr = dx.row(r).data();
                    for (std::size_t o = 0; o < l.out_dim; ++o) {
                        const double go = gr[o];
                        if (go == 0.0) continue;
                        db[o] += go;
                        double* dwo = dw.data() + o * l.in_dim;
                        const double* wo = w.data() + o * l.in_dim;
                        for (std::size_t i = 0; i < l.in_dim; ++i) {
                            dwo[i] += go * xr[i];
                            dxr[i] += go * wo[i];
                        }
                    }
                }
                g = std::move(dx);
                break;
            }
            case LayerKind::relu:
                for (std::size_t i = 0; i < g.size(); ++i)
                    if (!(x.data()[i] > 0.0)) g.data()[i] = 0.0;
                break;
            case LayerKind::sigmoid:
                for (std::size_t i = 0; i < g.size(); ++i) {
                    const double s = y.data()[i];
                    g.data()[i] *= s * (1.0 - s);
                }
                break;
        }
    }
    res.input_grad = std::move(g);
    return res;
}

struct LossResult {
    std::vector<double> per_sample;
    double mean = 0.0;
    Matrix grad;  // d(mean) / d(prediction)
};

/// Per-sample value is the mean squared difference over that sample's columns.
inline LossResult mse_loss(const Matrix& reconstruction, const Matrix& target) {
    if (reconstruction.rows() != target.rows() || reconstruction.cols() != target.cols())
        throw ConfigError("mse_loss: shape mismatch");
    const std::size_t n = target.rows(), d = target.cols();
    LossResult out;
    out.per_sample.assign(n, 0.0);
    out.grad = Matrix(n, d);
    if (n == 0 || d == 0) return out;
    const double scale = 2.0 / static_cast<double>(d * n);
    for (std::size_t r = 0; r < n; ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
            const double diff = reconstruction(r, c) - target(r, c);
            acc += diff * diff;
            out.grad(r, c) = scale * diff;
        }
        out.per_sample[r] = acc / static_cast<double>(d);
    }
    out.mean = std::accumulate(out.per_sample.begin(), out.per_sample.end(), 0.0) / static_cast<double>(n);
    return out;
}

/// Row-wise softmax with the usual max shift.
inline Matrix softmax(const Matrix& logits) {
    Matrix p(logits.rows(), logits.cols());
    for (std::size_t r = 0; r < logits.rows(); ++r) {
        auto row = logits.row(r);
        double mx = row[0];
        for (double v : row) mx = std::max(mx, v);
        double sum = 0.0;
        for (std::size_t c = 0; c < row.size(); ++c) sum += (p(r, c) = std::exp(row[c] - mx));
        for (std::size_t c = 0; c < row.size(); ++c) p(r, c) /= sum;
    }
    return p;
}

inline LossResult ce_loss(const Matrix& logits, std::span<const int> labels) {
    const std::size_t n = logits.rows(), k = logits.cols();
    if (labels.size() != n) throw ConfigError("ce_loss: label count does not match batch");
    for (int y : labels)
        if (y < 0 || static_cast<std::size_t>(y) >= k)
            throw InputError("label " + std::to_string(y) + " outside [0, " + std::to_string(k) + ")");
    LossResult out;
    out.per_sample.assign(n, 0.0);
    out.grad = softmax(logits);
    if (n == 0) return out;
    for (std::size_t r = 0; r < n; ++r) {
        auto row = logits.row(r);
        double mx = row[0];
        for (double v : row) mx = std::max(mx, v);
        double sum = 0.0;
        for (double v : row) sum += std::exp(v - mx);
        const std::size_t y = static_cast<std::size_t>(labels[r]);
        out.per_sample[r] = std::log(sum) - (row[y] - mx);
        out.grad(r, y) -= 1.0;
    }
    const double inv = 1.0 / static_cast<double>(n);
    for (auto& v : out.grad.data()) v *= inv;
    out.mean = std::accumulate(out.per_sample.begin(), out.per_sample.end(), 0.0) * inv;
    return out;
}

/// w <- w - lr * (grad + decay * w); decay only on weight tensors.
inline void sgd_step(ParamSet& params, const ParamSet& grads, const SgdConfig& cfg) {
    if (params.size() != grads.size()) throw ConfigError("sgd_step: gradient set size mismatch");
    for (std::size_t t = 0; t < params.size(); ++t) {
        auto& w = params[t].values;
        const auto& g = grads[t].values;
        if (w.size() != g.size()) throw ConfigError("sgd_step: tensor shape mismatch");
        const double decay = params[t].role == ParamRole::weight ? cfg.weight_decay : 0.0;
        for (std::size_t i = 0; i < w.size(); ++i) w[i] -= cfg.learning_rate * (g[i] + decay * w[i]);
    }
}

inline std::vector<int> argmax_rows(const Matrix& m) {
    std::vector<int> out(m.rows());
    for (std::size_t r = 0; r < m.rows(); ++r) {
        auto row = m.row(r);
        out[r] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    }
    return out;
}

}  // namespace fedss
