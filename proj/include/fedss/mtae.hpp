#pragma once

// Multi-task autoencoder: encoder f: x -> z, decoder g: z -> x_hat and
// classifier h: z -> logits, trained on
//
//     L' = rec_w * mean(MSE) + cls_w * mean(CE) + reg_w * L_reg
//
// where L_reg is the multi-class SVDD hinge on the embeddings (only while the
// SVDD state is active).

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fedss/error.hpp"
#include "fedss/matrix.hpp"
#include "fedss/nn.hpp"
#include "fedss/rng.hpp"
#include "fedss/svdd.hpp"

namespace fedss {

struct MtaeSpec {
    std::size_t input_dim = 0;
    std::size_t embed_dim = 32;
    std::vector<std::size_t> encoder_hidden{128};
    std::vector<std::size_t> decoder_hidden{128};
    std::vector<std::size_t> classifier_hidden{};
    std::size_t class_count = 10;

    void validate() const {
        if (input_dim < 1) throw ConfigError("model.input_dim must be positive");
        if (embed_dim < 2) throw ConfigError("model.embed_dim must be at least 2");
        if (class_count < 2) throw ConfigError("class count must be at least 2");
        for (auto h : encoder_hidden)
            if (h == 0) throw ConfigError("model.encoder_hidden entries must be positive");
        for (auto h : decoder_hidden)
            if (h == 0) throw ConfigError("model.decoder_hidden entries must be positive");
        for (auto h : classifier_hidden)
            if (h == 0) throw ConfigError("model.classifier_hidden entries must be positive");
    }

    friend bool operator==(const MtaeSpec&, const MtaeSpec&) = default;
};

struct LossWeights {
    double rec = 1.0;
    double cls = 0.05;
    double reg = 1e-5;

    void validate() const {
        for (double w : {rec, cls, reg})
            if (!std::isfinite(w) || w < 0.0) throw ConfigError("loss weights must be finite and nonnegative");
    }

    friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

struct SampleLosses {
    std::vector<double> rec;
    std::vector<double> cls;
    std::vector<double> weighted_sum;
    std::vector<std::pair<double, double>> loss_point_2d;  // (cls_w * CE, rec_w * MSE)

    std::size_t size() const { return rec.size(); }

    /// The 2D loss points as an n x 2 matrix, the input of loss-space detectors.
    Matrix points() const {
        Matrix m(loss_point_2d.size(), 2);
        for (std::size_t i = 0; i < loss_point_2d.size(); ++i) {
            m(i, 0) = loss_point_2d[i].first;
            m(i, 1) = loss_point_2d[i].second;
        }
        return m;
    }
};

/// Layer stacks of the three heads. Parameters are kept in one flat ParamSet
/// ordered encoder, decoder, classifier.
class Mtae {
public:
    explicit Mtae(MtaeSpec spec) : spec_(std::move(spec)) {
        spec_.validate();
        encoder_ = dense_stack(spec_.input_dim, spec_.encoder_hidden, spec_.embed_dim);
        decoder_ = dense_stack(spec_.embed_dim, spec_.decoder_hidden, spec_.input_dim);
        decoder_.push_back(LayerSpec::sigmoid());
        classifier_ = dense_stack(spec_.embed_dim, spec_.classifier_hidden, spec_.class_count);
        enc_n_ = 2 * dense_count(encoder_);
        dec_n_ = 2 * dense_count(decoder_);
        cls_n_ = 2 * dense_count(classifier_);
    }

    const MtaeSpec& spec() const { return spec_; }
    const std::vector<LayerSpec>& encoder() const { return encoder_; }
    const std::vector<LayerSpec>& decoder() const { return decoder_; }
    const std::vector<LayerSpec>& classifier() const { return classifier_; }
    std::size_t tensor_count() const { return enc_n_ + dec_n_ + cls_n_; }

    ParamSet init(Engine& rng) const {
        ParamSet all = init_params(encoder_, rng);
        for (auto* stack : {&decoder_, &classifier_}) {
            ParamSet part = init_params(*stack, rng);
            all.insert(all.end(), part.begin(), part.end());
        }
        return all;
    }

    std::span<const ParamTensor> encoder_params(const ParamSet& p) const { return checked(p).subspan(0, enc_n_); }
    std::span<const ParamTensor> decoder_params(const ParamSet& p) const { return checked(p).subspan(enc_n_, dec_n_); }
    std::span<const ParamTensor> classifier_params(const ParamSet& p) const {
        return checked(p).subspan(enc_n_ + dec_n_, cls_n_);
    }

private:
    static std::vector<LayerSpec> dense_stack(std::size_t in, const std::vector<std::size_t>& hidden,
                                              std::size_t out) {
        std::vector<LayerSpec> layers;
        std::size_t cur = in;
        for (auto h : hidden) {
            layers.push_back(LayerSpec::dense(cur, h));
            layers.push_back(LayerSpec::relu());
            cur = h;
        }
        layers.push_back(LayerSpec::dense(cur, out));
        return layers;
    }

    std::span<const ParamTensor> checked(const ParamSet& p) const {
        if (p.size() != tensor_count()) throw ConfigError("parameter set does not match MTAE layout");
        return p;
    }

    MtaeSpec spec_;
    std::vector<LayerSpec> encoder_, decoder_, classifier_;
    std::size_t enc_n_ = 0, dec_n_ = 0, cls_n_ = 0;
};

struct MtaeOutput {
    Trace encoder_trace, decoder_trace, classifier_trace;
    LossResult rec, cls;
    SampleLosses losses;

    const Matrix& z() const { return encoder_trace.output(); }
    const Matrix& reconstruction() const { return decoder_trace.output(); }
    const Matrix& logits() const { return classifier_trace.output(); }
};

inline SampleLosses make_sample_losses(std::vector<double> rec, std::vector<double> cls, const LossWeights& w) {
    SampleLosses s;
    s.rec = std::move(rec);
    s.cls = std::move(cls);
    s.weighted_sum.resize(s.rec.size());
    s.loss_point_2d.resize(s.rec.size());
    for (std::size_t i = 0; i < s.rec.size(); ++i) {
        const double a = w.cls * s.cls[i];
        const double b = w.rec * s.rec[i];
        s.loss_point_2d[i] = {a, b};
        s.weighted_sum[i] = a + b;
    }
    return s;
}

inline Matrix embed(const Mtae& model, const ParamSet& params, const Matrix& x) {
    return forward(model.encoder(), model.encoder_params(params), x).output();
}

inline MtaeOutput mtae_forward(const Mtae& model, const ParamSet& params, const Matrix& x,
                               std::span<const int> labels, const LossWeights& weights) {
    if (x.rows() == 0) throw InputError("mtae_forward: empty batch");
    MtaeOutput out;
    out.encoder_trace = forward(model.encoder(), model.encoder_params(params), x);
    out.decoder_trace = forward(model.decoder(), model.decoder_params(params), out.z());
    out.classifier_trace = forward(model.classifier(), model.classifier_params(params), out.z());
    out.rec = mse_loss(out.reconstruction(), x);
    out.cls = ce_loss(out.logits(), labels);
    out.losses = make_sample_losses(out.rec.per_sample, out.cls.per_sample, weights);
    return out;
}

inline double combined_loss(const SampleLosses& s, const LossWeights& w) {
    if (s.size() == 0) return 0.0;
    double rec = 0.0, cls = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        rec += s.rec[i];
        cls += s.cls[i];
    }
    const double n = static_cast<double>(s.size());
    return w.rec * (rec / n) + w.cls * (cls / n);
}

struct RegLoss {
    double value = 0.0;
    Matrix grad;  // d value / d z
};

/// Multi-class SVDD hinge averaged over classes. n_i counts class-i samples in
/// this batch; classes absent from the batch contribute R_i^2 only. Radii are
/// constants here. Returns nullopt while the regularizer is not enabled.
inline std::optional<RegLoss> svdd_reg_loss(const Matrix& z, std::span<const int> labels,
                                            const SvddState& state) {
    if (!state.active) return std::nullopt;
    const std::size_t k = state.centroids.rows();
    if (state.radii.size() != k) throw ProtocolError("svdd state: radii/centroid count mismatch");
    if (labels.size() != z.rows()) throw InputError("svdd_reg_loss: label count mismatch");
    if (z.rows() > 0 && z.cols() != state.centroids.cols())
        throw ProtocolError("svdd state: centroid width does not match embeddings");

    std::vector<std::size_t> n_class(k, 0);
    for (int y : labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= k)
            throw InputError("svdd_reg_loss: label " + std::to_string(y) + " out of range");
        ++n_class[y];
    }

    RegLoss out;
    out.grad = Matrix(z.rows(), z.cols());
    std::vector<double> hinge(k, 0.0);
    const double kd = static_cast<double>(k);
    for (std::size_t r = 0; r < z.rows(); ++r) {
        const auto y = static_cast<std::size_t>(labels[r]);
        const double r2 = state.radii[y] * state.radii[y];
        auto zr = z.row(r);
        auto mu = state.centroids.row(y);
        double d2 = 0.0;
        for (std::size_t c = 0; c < z.cols(); ++c) d2 += (zr[c] - mu[c]) * (zr[c] - mu[c]);
        if (d2 > r2) {
            hinge[y] += d2 - r2;
            const double scale = 2.0 / (kd * static_cast<double>(n_class[y]));
            for (std::size_t c = 0; c < z.cols(); ++c) out.grad(r, c) = scale * (zr[c] - mu[c]);
        }
    }
    for (std::size_t i = 0; i < k; ++i) {
        out.value += state.radii[i] * state.radii[i];
        if (n_class[i] > 0) out.value += hinge[i] / static_cast<double>(n_class[i]);
    }
    out.value /= kd;
    return out;
}

struct MtaeGradient {
    double loss = 0.0;  // L' including the regularizer when active
    ParamSet grads;     // same layout as the parameter set
    SampleLosses losses;
};

/// Loss and gradient of the full training objective on one batch. `svdd` may
/// be null or inactive, in which case the regularizer is skipped.
inline MtaeGradient mtae_loss_and_grad(const Mtae& model, const ParamSet& params, const Matrix& x,
                                       std::span<const int> labels, const LossWeights& weights,
                                       const SvddState* svdd = nullptr) {
    MtaeOutput fw = mtae_forward(model, params, x, labels, weights);
    MtaeGradient res;
    res.loss = weights.rec * fw.rec.mean + weights.cls * fw.cls.mean;

    Matrix up_rec = fw.rec.grad;
    for (auto& v : up_rec.data()) v *= weights.rec;
    Matrix up_cls = fw.cls.grad;
    for (auto& v : up_cls.data()) v *= weights.cls;

    auto dec = backward(model.decoder(), model.decoder_params(params), fw.decoder_trace, up_rec);
    auto cls = backward(model.classifier(), model.classifier_params(params), fw.classifier_trace, up_cls);

    Matrix dz = dec.input_grad;
    for (std::size_t i = 0; i < dz.size(); ++i) dz.data()[i] += cls.input_grad.data()[i];
    if (svdd != nullptr && weights.reg > 0.0) {
        if (auto reg = svdd_reg_loss(fw.z(), labels, *svdd)) {
            res.loss += weights.reg * reg->value;
            for (std::size_t i = 0; i < dz.size(); ++i) dz.data()[i] += weights.reg * reg->grad.data()[i];
        }
    }
    auto enc = backward(model.encoder(), model.encoder_params(params), fw.encoder_trace, dz);

    res.grads.reserve(params.size());
    for (auto* part : {&enc.grads, &dec.grads, &cls.grads})
        res.grads.insert(res.grads.end(), std::make_move_iterator(part->begin()),
                         std::make_move_iterator(part->end()));
    res.losses = std::move(fw.losses);
    return res;
}

}  // namespace fedss
