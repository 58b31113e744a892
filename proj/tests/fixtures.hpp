#pragma once

// Small federated experiments and the centralized SGD reference.

#include <cstdint>
#include <vector>

#include "fedss/datasets.hpp"
#include "fedss/federation.hpp"
#include "fedss/mtae.hpp"

namespace fedss::test {

struct TinyExperiment {
    LabeledDataset train, test;
    std::vector<ClientShard> shards;
    MtaeSpec spec;
    TrainingSetup setup;
};

inline TinyExperiment tiny_experiment(std::uint64_t seed, std::size_t clients, std::size_t per_round,
                                      SelectionMode mode, std::size_t rounds = 12, std::size_t warmup = 4) {
    TinyExperiment e;
    e.train = inject_closed_set(synth_generate(3, 20, 5, seed), 0.3, seed);
    e.test = synth_generate(3, 6, 5, seed + 1000);
    e.shards = partition_noniid(e.train, clients, PartitionScheme{}, seed);
    e.spec.input_dim = 25;
    e.spec.embed_dim = 4;
    e.spec.encoder_hidden = {8};
    e.spec.decoder_hidden = {8};
    e.spec.class_count = 3;
    auto& f = e.setup.federation;
    f.rounds = rounds;
    f.clients = clients;
    f.clients_per_round = per_round;
    f.warmup_round = warmup;
    f.refit_interval = 3;
    f.eval_interval = 5;
    f.seed = seed;
    f.mode = mode;
    e.setup.sgd.batch_size = 8;
    e.setup.sgd.local_epochs = 1;
    return e;
}

/// Plain SGD on one dataset reproducing the single-client federated step
/// order: init stream, then one shuffle stream per round.
inline ParamSet centralized_sgd(const Mtae& model, const LabeledDataset& data, const SgdConfig& sgd,
                                const LossWeights& weights, std::uint64_t seed, std::size_t rounds) {
    auto init = stream(seed, "init");
    ParamSet p = model.init(init);
    const std::size_t n = data.size();
    for (std::size_t r = 0; r < rounds; ++r) {
        auto rng = stream(seed, "shuffle", r, 0);
        for (std::size_t e = 0; e < sgd.local_epochs; ++e) {
            const auto order = permutation(rng, n);
            for (std::size_t b = 0; b < n; b += sgd.batch_size) {
                std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(b),
                                             order.begin() + static_cast<std::ptrdiff_t>(std::min(n, b + sgd.batch_size)));
                std::vector<int> y;
                for (auto i : idx) y.push_back(data.labels[i]);
                const auto g = mtae_loss_and_grad(model, p, data.images.gather(idx), y, weights);
                sgd_step(p, g.grads, sgd);
            }
        }
    }
    return p;
}

inline double max_abs_diff(const ParamSet& a, const ParamSet& b) {
    double m = 0.0;
    for (std::size_t t = 0; t < a.size(); ++t)
        for (std::size_t i = 0; i < a[t].values.size(); ++i) m = std::max(m, std::abs(a[t].values[i] - b[t].values[i]));
    return m;
}

}  // namespace fedss::test
