#pragma once

// FedAvg simulation with per-round sample selection.
//
// Each round the server samples P of N clients, every client optionally
// extracts per-sample loss points or embeddings with the current global model
// (from the warm-up round t_s on), drops the samples flagged by the active
// selector (after t_s), trains E local epochs and returns its weights. The
// server pools the clients' points, refits the outlier detector on the refit
// cadence (or updates the adaptive threshold), averages the weights by
// retained sample count, and refreshes the SVDD radii when the regularizer is
// active.
//
// All randomness comes from named streams keyed by (round, client), so client
// updates can run on any number of threads without changing results.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "fedss/adaptive_threshold.hpp"
#include "fedss/datasets.hpp"
#include "fedss/error.hpp"
#include "fedss/matrix.hpp"
#include "fedss/metrics.hpp"
#include "fedss/mtae.hpp"
#include "fedss/nn.hpp"
#include "fedss/outlier.hpp"
#include "fedss/rng.hpp"
#include "fedss/svdd.hpp"

namespace fedss {

enum class SelectionMode { none, adaptive_threshold, ocsvm, iforest };
enum class SelectionSpace { loss2d, feature };

struct FederationConfig {
    std::size_t rounds = 200;
    std::size_t clients = 20;
    std::size_t clients_per_round = 2;
    std::size_t warmup_round = 80;    // t_s
    std::size_t refit_interval = 5;   // t_w
    std::size_t eval_interval = 10;
    std::uint64_t seed = 1;
    SelectionMode mode = SelectionMode::none;
    SelectionSpace space = SelectionSpace::loss2d;

    void validate() const {
        if (clients < 1) throw ConfigError("federation.clients must be at least 1");
        if (clients_per_round < 1 || clients_per_round > clients)
            throw ConfigError("federation.clients_per_round must lie in [1, federation.clients]");
        if (refit_interval < 1) throw ConfigError("federation.refit_interval must be at least 1");
        if (eval_interval < 1) throw ConfigError("federation.eval_interval must be at least 1");
        if (rounds > 0 && warmup_round >= rounds)
            throw ConfigError("federation.warmup_round must be less than federation.rounds");
    }

    friend bool operator==(const FederationConfig&, const FederationConfig&) = default;
};

struct SelectionParams {
    double contamination = 0.4;  // OCSVM nu, IF quantile
    std::optional<double> ocsvm_gamma;
    double ocsvm_tol = 1e-4;
    std::size_t iforest_trees = 0;
    std::size_t iforest_subsample = 0;
    double at_loss_step = 0.1;
    std::size_t at_window = 5;
    double at_retain_prob = 0.75;
    bool svdd_enabled = false;
    double svdd_nu = 0.4;
    std::size_t svdd_activation_round = 500;

    void validate() const {
        if (!(contamination >= 0.0 && contamination <= 1.0))
            throw ConfigError("selection.contamination must lie in [0, 1]");
        if (ocsvm_gamma && !(*ocsvm_gamma > 0.0)) throw ConfigError("selection.ocsvm.gamma must be positive");
        if (!(ocsvm_tol > 0.0)) throw ConfigError("selection.ocsvm.tol must be positive");
        if (!(svdd_nu > 0.0 && svdd_nu < 1.0)) throw ConfigError("selection.svdd.nu must lie in (0, 1)");
        AtState at;
        at.loss_step = at_loss_step;
        at.window = at_window;
        at.retain_prob = at_retain_prob;
        at.validate();
    }

    DetectorParams detector() const {
        DetectorParams p;
        p.contamination = contamination;
        p.gamma = ocsvm_gamma;
        p.tol = ocsvm_tol;
        p.trees = iforest_trees;
        p.subsample = iforest_subsample;
        return p;
    }

    friend bool operator==(const SelectionParams&, const SelectionParams&) = default;
};

struct TrainingSetup {
    FederationConfig federation;
    SgdConfig sgd;
    LossWeights weights;
    SelectionParams selection;
    std::size_t workers = 1;

    void validate() const {
        federation.validate();
        sgd.validate();
        weights.validate();
        selection.validate();
        if (federation.mode == SelectionMode::ocsvm && !(selection.contamination > 0.0))
            throw ConfigError("selection.contamination must be positive for the one-class SVM (it is nu)");
    }
};

struct ClientReturn {
    std::size_t client_id = 0;
    ParamSet weights;
    std::size_t retained = 0;           // m_i
    Matrix kappa;                       // loss points or embeddings, pre-selection
    std::optional<LossMeta> loss_meta;  // adaptive-threshold mode only
    std::optional<DistanceReport> distances;
    std::size_t removed = 0;
    std::size_t removed_noisy = 0;
};

struct RoundReport {
    std::size_t round = 0;
    std::vector<std::size_t> clients;
    std::vector<std::size_t> retained;  // m_i per participating client
    std::size_t selected_samples = 0;
    std::size_t removed_samples = 0;
    std::size_t removed_noisy = 0;
    std::size_t removed_clean = 0;
    bool selection_round = false;  // removal was allowed this round
    bool detector_fitted = false;
    std::optional<MetricRecord> metrics;

    friend bool operator==(const RoundReport&, const RoundReport&) = default;
};

class RoundError : public Error {
public:
    RoundError(std::size_t round, const std::string& what)
        : Error("round " + std::to_string(round) + ": " + what), round_(round) {}
    std::size_t round() const noexcept { return round_; }

private:
    std::size_t round_;
};

/// Uniform P-of-N sample without replacement, ascending ids.
inline std::vector<std::size_t> select_clients(std::size_t clients, std::size_t per_round, std::uint64_t seed,
                                               std::size_t round) {
    if (per_round > clients) throw ConfigError("cannot select more clients than exist");
    auto rng = stream(seed, "clients", round);
    auto ids = sample_without_replacement(rng, clients, per_round);
    std::sort(ids.begin(), ids.end());
    return ids;
}

/// Per-parameter mean weighted by m_i, merged in ascending client id order.
inline ParamSet aggregate(std::span<const ClientReturn> returns) {
    if (returns.empty()) throw ProtocolError("aggregate: no client returned weights");
    std::vector<const ClientReturn*> order;
    for (const auto& r : returns) order.push_back(&r);
    std::sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->client_id < b->client_id; });

    double total = 0.0;
    for (auto* r : order) total += static_cast<double>(r->retained);
    if (!(total > 0.0)) throw ProtocolError("aggregate: clients report zero samples");

    const ParamSet& ref = order.front()->weights;
    for (auto* r : order) {
        if (r->weights.size() != ref.size()) throw ProtocolError("aggregate: parameter set size mismatch");
        for (std::size_t t = 0; t < ref.size(); ++t)
            if (r->weights[t].shape != ref[t].shape || r->weights[t].values.size() != ref[t].values.size())
                throw ProtocolError("aggregate: parameter shape mismatch in tensor " + std::to_string(t));
    }

    ParamSet out = ref;
    for (auto& t : out) std::fill(t.values.begin(), t.values.end(), 0.0);
    for (auto* r : order) {
        const double share = static_cast<double>(r->retained) / total;
        for (std::size_t t = 0; t < out.size(); ++t) {
            auto& dst = out[t].values;
            const auto& src = r->weights[t].values;
            for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += share * src[i];
        }
    }
    return out;
}

/// E epochs of shuffled mini-batch SGD; one shuffle stream per (round, client).
inline ParamSet local_train(const Mtae& model, ParamSet params, const Matrix& x, std::span<const int> labels,
                            const SgdConfig& sgd, const LossWeights& weights, const SvddState* svdd, Engine& rng) {
    const std::size_t n = x.rows();
    if (n == 0) return params;
    for (std::size_t e = 0; e < sgd.local_epochs; ++e) {
        const auto order = permutation(rng, n);
        for (std::size_t begin = 0; begin < n; begin += sgd.batch_size) {
            const std::size_t end = std::min(n, begin + sgd.batch_size);
            std::span<const std::size_t> idx(order.data() + begin, end - begin);
            const Matrix bx = x.gather(idx);
            std::vector<int> by;
            by.reserve(idx.size());
            for (auto i : idx) by.push_back(labels[i]);
            auto g = mtae_loss_and_grad(model, params, bx, by, weights, svdd);
            sgd_step(params, g.grads, sgd);
        }
    }
    return params;
}

/// Read-only view of what a client receives from the server in one round.
struct ClientContext {
    const Mtae& model;
    const LabeledDataset& data;
    const TrainingSetup& setup;
    const OutlierModel* detector = nullptr;
    std::optional<double> loss_threshold;
    const SvddState* svdd = nullptr;
};

inline ClientReturn client_update(const ClientContext& ctx, const ClientShard& shard, const ParamSet& global,
                                  std::size_t round) {
    if (shard.size() == 0) throw ProtocolError("client " + std::to_string(shard.client_id) + " has an empty shard");
    const auto& fed = ctx.setup.federation;
    const auto& sel = ctx.setup.selection;
    const LabeledDataset local = ctx.data.subset(shard.indices);
    const bool selecting = fed.mode != SelectionMode::none;
    const bool active_svdd = ctx.svdd != nullptr && ctx.svdd->active;

    ClientReturn ret;
    ret.client_id = shard.client_id;

    std::vector<double> weighted;
    if (selecting && round >= fed.warmup_round) {
        auto fw = mtae_forward(ctx.model, global, local.images, local.labels, ctx.setup.weights);
        weighted = fw.losses.weighted_sum;
        ret.kappa = fed.space == SelectionSpace::loss2d ? fw.losses.points() : fw.z();
        if (fed.mode == SelectionMode::adaptive_threshold) {
            LossMeta meta;
            meta.low = *std::min_element(weighted.begin(), weighted.end());
            meta.high = *std::max_element(weighted.begin(), weighted.end());
            ret.loss_meta = meta;
        }
    }

    std::vector<std::size_t> keep(local.size());
    for (std::size_t i = 0; i < keep.size(); ++i) keep[i] = i;
    if (selecting && round > fed.warmup_round) {
        if (fed.mode == SelectionMode::adaptive_threshold) {
            if (ctx.loss_threshold) {
                auto rng = stream(fed.seed, "at", round, shard.client_id);
                keep = select_samples(weighted, *ctx.loss_threshold, sel.at_retain_prob, rng);
            }
        } else if (ctx.detector != nullptr) {
            const auto verdict = predict_outliers(*ctx.detector, ret.kappa, sel.contamination);
            keep.clear();
            for (std::size_t i = 0; i < verdict.is_outlier.size(); ++i)
                if (!verdict.is_outlier[i]) keep.push_back(i);
        }
        if (keep.empty()) {
            // Never return m_i = 0: fall back to the single lowest-loss sample.
            keep.push_back(static_cast<std::size_t>(std::min_element(weighted.begin(), weighted.end()) - weighted.begin()));
        }
    }

    if (ret.loss_meta) {
        for (auto i : keep) ret.loss_meta->selected_loss_sum += weighted[i];
        ret.loss_meta->selected_count = keep.size();
    }

    ret.removed = local.size() - keep.size();
    {
        std::vector<std::uint8_t> kept(local.size(), 0);
        for (auto i : keep) kept[i] = 1;
        for (std::size_t i = 0; i < local.size(); ++i)
            if (!kept[i] && local.noise_flag[i]) ++ret.removed_noisy;
    }

    const Matrix train_x = local.images.gather(keep);
    std::vector<int> train_y;
    train_y.reserve(keep.size());
    for (auto i : keep) train_y.push_back(local.labels[i]);

    auto rng = stream(fed.seed, "shuffle", round, shard.client_id);
    ret.weights = local_train(ctx.model, global, train_x, train_y, ctx.setup.sgd, ctx.setup.weights,
                              active_svdd ? ctx.svdd : nullptr, rng);
    ret.retained = keep.size();

    if (active_svdd) ret.distances = client_distances(embed(ctx.model, ret.weights, train_x), train_y, ctx.svdd->centroids);
    return ret;
}

inline MetricRecord evaluate_model(const Mtae& model, const ParamSet& params, const LabeledDataset& test,
                                   std::size_t round) {
    MetricRecord rec;
    rec.round = round;
    if (test.size() == 0) return rec;
    const auto z = embed(model, params, test.images);
    const auto logits = forward(model.classifier(), model.classifier_params(params), z).output();
    const auto recon = forward(model.decoder(), model.decoder_params(params), z).output();
    const auto cm = classification_metrics(argmax_rows(logits), test.labels, model.spec().class_count);
    rec.accuracy = cm.accuracy;
    rec.macro_precision = cm.macro_precision;
    rec.macro_recall = cm.macro_recall;
    rec.macro_f1 = cm.macro_f1;
    double psnr_sum = 0.0;
    for (std::size_t i = 0; i < test.size(); ++i) psnr_sum += psnr(recon.row(i), test.images.row(i));
    rec.psnr_db = psnr_sum / static_cast<double>(test.size());
    rec.ssim = ssim_batch(recon, test.images, test.image_rows, test.image_cols);
    return rec;
}

/// Server state across rounds.
class Federation {
public:
    Federation(const Mtae& model, const LabeledDataset& train, const LabeledDataset& test,
               std::vector<ClientShard> shards, TrainingSetup setup)
        : model_(model), train_(train), test_(test), shards_(std::move(shards)), setup_(std::move(setup)) {
        setup_.validate();
        if (shards_.size() != setup_.federation.clients)
            throw ConfigError("shard count does not match federation.clients");
        for (const auto& s : shards_)
            if (s.size() == 0) throw ConfigError("client " + std::to_string(s.client_id) + " holds no samples");
        auto rng = stream(setup_.federation.seed, "init");
        global_ = model_.init(rng);
        at_.loss_step = setup_.selection.at_loss_step;
        at_.window = setup_.selection.at_window;
        at_.retain_prob = setup_.selection.at_retain_prob;
        svdd_.nu = setup_.selection.svdd_nu;
        svdd_.activation_round = setup_.selection.svdd_activation_round;
    }

    const ParamSet& global() const { return global_; }
    std::size_t round() const { return round_; }
    const AtState& at_state() const { return at_; }
    const SvddState& svdd_state() const { return svdd_; }
    const std::optional<OutlierModel>& detector() const { return detector_; }
    const std::vector<std::size_t>& fit_rounds() const { return fit_rounds_; }

    MetricRecord evaluate() const { return evaluate_model(model_, global_, test_, round_); }

    RoundReport run_round() {
        const std::size_t round = round_;
        try {
            return run_round_impl(round);
        } catch (const RoundError&) {
            throw;
        } catch (const std::exception& e) {
            throw RoundError(round, e.what());
        }
    }

private:
    bool detector_mode() const {
        return setup_.federation.mode == SelectionMode::ocsvm || setup_.federation.mode == SelectionMode::iforest;
    }

    RoundReport run_round_impl(std::size_t round) {
        const auto& fed = setup_.federation;
        if (setup_.selection.svdd_enabled) {
            maybe_activate(svdd_, round, model_.spec().class_count, [&] {
                return std::make_pair(embed(model_, global_, test_.images), test_.labels);
            });
        }

        RoundReport report;
        report.round = round;
        report.clients = select_clients(fed.clients, fed.clients_per_round, fed.seed, round);
        report.selection_round = round > fed.warmup_round;

        ClientContext ctx{model_, train_, setup_, detector_ ? &*detector_ : nullptr, at_.lt, &svdd_};
        std::vector<ClientReturn> returns(report.clients.size());
        dispatch(report.clients.size(), [&](std::size_t slot) {
            returns[slot] = client_update(ctx, shards_[report.clients[slot]], global_, round);
        });

        for (const auto& r : returns) {
            report.retained.push_back(r.retained);
            report.selected_samples += r.retained;
            report.removed_samples += r.removed;
            report.removed_noisy += r.removed_noisy;
        }
        report.removed_clean = report.removed_samples - report.removed_noisy;

        if (round >= fed.warmup_round && fed.mode != SelectionMode::none) {
            if (detector_mode() && (round % fed.refit_interval == 0 || round == fed.warmup_round)) {
                Matrix pooled;
                for (const auto& r : returns)
                    for (std::size_t i = 0; i < r.kappa.rows(); ++i) pooled.append_row(r.kappa.row(i));
                if (pooled.rows() >= 2) {
                    const auto kind = fed.mode == SelectionMode::ocsvm ? DetectorKind::ocsvm : DetectorKind::iforest;
                    detector_ = fit_detector(kind, pooled, setup_.selection.detector(),
                                             splitmix64(fed.seed ^ splitmix64(round + 0xD1B54A32D192ED03ULL)));
                    report.detector_fitted = true;
                    fit_rounds_.push_back(round);
                }
            } else if (fed.mode == SelectionMode::adaptive_threshold) {
                std::vector<double> lows, highs;
                double loss_sum = 0.0;
                std::size_t selected = 0;
                for (const auto& r : returns) {
                    if (!r.loss_meta) continue;
                    lows.push_back(r.loss_meta->low);
                    highs.push_back(r.loss_meta->high);
                    loss_sum += r.loss_meta->selected_loss_sum;
                    selected += r.loss_meta->selected_count;
                }
                at_ = control_ltr(std::move(at_), loss_sum, selected, round);
                at_.lt = calculate_lt(lows, highs, at_.ltr);
            }
        }

        global_ = aggregate(returns);

        if (svdd_.active) {
            std::vector<DistanceReport> reports;
            for (auto& r : returns)
                if (r.distances) reports.push_back(std::move(*r.distances));
            const auto merged = merge_reports(reports, model_.spec().class_count);
            svdd_.radii = update_radii(merged, svdd_.nu, svdd_.radii);
        }

        ++round_;
        if (round % fed.eval_interval == 0) report.metrics = evaluate_model(model_, global_, test_, round);
        return report;
    }

    template <class Fn>
    void dispatch(std::size_t count, Fn&& fn) {
        const std::size_t workers = std::min(std::max<std::size_t>(setup_.workers, 1), count);
        std::vector<std::exception_ptr> errors(count);
        if (workers <= 1) {
            for (std::size_t i = 0; i < count; ++i) {
                try {
                    fn(i);
                } catch (...) {
                    errors[i] = std::current_exception();
                }
            }
        } else {
            std::atomic<std::size_t> next{0};
            std::vector<std::thread> pool;
            for (std::size_t w = 0; w < workers; ++w)
                pool.emplace_back([&] {
                    for (std::size_t i; (i = next.fetch_add(1)) < count;) {
                        try {
                            fn(i);
                        } catch (...) {
                            errors[i] = std::current_exception();
                        }
                    }
                });
            for (auto& t : pool) t.join();
        }
        for (auto& e : errors)
            if (e) std::rethrow_exception(e);
    }

    const Mtae& model_;
    const LabeledDataset& train_;
    const LabeledDataset& test_;
    std::vector<ClientShard> shards_;
    TrainingSetup setup_;
    ParamSet global_;
    std::optional<OutlierModel> detector_;
    AtState at_;
    SvddState svdd_;
    std::vector<std::size_t> fit_rounds_;
    std::size_t round_ = 0;
};

struct ExperimentResult {
    std::vector<RoundReport> reports;
    std::optional<MetricRecord> best;  // best evaluated round by test accuracy
    MetricRecord final_metrics;        // global model after the last round
    ParamSet final_weights;
};

inline ExperimentResult run_experiment(const Mtae& model, const LabeledDataset& train, const LabeledDataset& test,
                                       std::vector<ClientShard> shards, const TrainingSetup& setup) {
    Federation fed(model, train, test, std::move(shards), setup);
    ExperimentResult res;
    BestRoundTracker tracker;
    res.reports.reserve(setup.federation.rounds);
    for (std::size_t r = 0; r < setup.federation.rounds; ++r) {
        auto report = fed.run_round();
        if (report.metrics) tracker.update(*report.metrics);
        res.reports.push_back(std::move(report));
    }
    res.final_metrics = res.reports.empty() || !res.reports.back().metrics ? fed.evaluate()
                                                                           : *res.reports.back().metrics;
    if (res.reports.empty()) tracker.update(res.final_metrics);
    res.best = tracker.best;
    res.final_weights = fed.global();
    return res;
}

}  // namespace fedss
