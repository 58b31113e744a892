#pragma once

// Experiment assembly and the command-line front end.
//
//   fedss run <config> [--seed S] [--workers W] [--out DIR]
//   fedss validate <config>
//
// Exit codes: 0 success, 2 configuration error, 3 runtime error.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "fedss/config.hpp"
#include "fedss/datasets.hpp"
#include "fedss/error.hpp"
#include "fedss/federation.hpp"
#include "fedss/mtae.hpp"
#include "fedss/report.hpp"

namespace fedss {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitRuntime = 3;

struct PreparedExperiment {
    LabeledDataset train;
    LabeledDataset test;
    std::vector<ClientShard> shards;
    MtaeSpec spec;
    TrainingSetup setup;
};

/// Seed of the held-out synthetic test set, distinct from the training draw.
inline std::uint64_t test_seed(std::uint64_t seed) { return splitmix64(seed ^ 0x7E57D47A5E7ULL); }

inline PreparedExperiment prepare_experiment(const ExperimentConfig& c, std::size_t workers = 1) {
    PreparedExperiment p;
    const auto& d = c.dataset;
    const auto seed = c.federation.seed;
    if (d.source == DatasetConfig::Source::synth) {
        p.train = synth_generate(d.class_count, d.train_per_class, d.image_side, seed);
        p.test = synth_generate(d.class_count, d.test_per_class, d.image_side, test_seed(seed));
    } else {
        p.train = load_idx(d.train_images, d.train_labels);
        p.test = load_idx(d.test_images, d.test_labels);
        if (p.train.input_dim() != p.test.input_dim()) throw InputError("train and test image sizes differ");
        p.test.class_count = p.train.class_count = std::max(p.train.class_count, p.test.class_count);
    }

    switch (c.noise.kind) {
        case NoiseKind::none: break;
        case NoiseKind::closed_set: p.train = inject_closed_set(std::move(p.train), c.noise.rate, seed); break;
        case NoiseKind::open_set: {
            LabeledDataset source;
            if (c.noise.open_source == DatasetConfig::Source::synth) {
                if (d.source != DatasetConfig::Source::synth || p.train.image_rows != p.train.image_cols)
                    throw ConfigError("noise.open_set_source: synth source needs square images");
                const std::size_t per = c.noise.open_per_class ? c.noise.open_per_class
                                                               : p.train.size() / p.train.class_count + 1;
                source = synth_generate(p.train.class_count, per, p.train.image_rows, seed, 1);
            } else {
                source = load_idx(c.noise.open_images, c.noise.open_labels);
            }
            p.train = inject_open_set(std::move(p.train), source, c.noise.rate, seed);
            break;
        }
    }

    if (c.federation.clients > p.train.size())
        throw ConfigError("federation.clients (" + std::to_string(c.federation.clients) + ") exceeds the " +
                          std::to_string(p.train.size()) + " training samples");
    p.shards = partition_noniid(p.train, c.federation.clients, c.partition, seed);

    p.spec.input_dim = p.train.input_dim();
    p.spec.embed_dim = c.model.embed_dim;
    p.spec.encoder_hidden = c.model.encoder_hidden;
    p.spec.decoder_hidden = c.model.decoder_hidden;
    p.spec.classifier_hidden = c.model.classifier_hidden;
    p.spec.class_count = p.train.class_count;

    p.setup.federation = c.federation;
    p.setup.sgd = c.model.sgd;
    p.setup.weights = c.model.loss_weights;
    p.setup.selection = c.selection;
    p.setup.workers = workers;
    return p;
}

inline ExperimentResult run_config(const ExperimentConfig& c, std::size_t workers = 1) {
    auto p = prepare_experiment(c, workers);
    const Mtae model(p.spec);
    return run_experiment(model, p.train, p.test, std::move(p.shards), p.setup);
}

inline int cli_main(int argc, char** argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Federated MTAE training with noisy-sample selection"};
    app.require_subcommand(1);

    std::string run_path;
    std::optional<std::uint64_t> seed;
    std::size_t workers = 1;
    std::optional<std::string> out_dir;
    auto* run = app.add_subcommand("run", "train a configured experiment and write its reports");
    run->add_option("config", run_path, "experiment config (JSON)")->required();
    run->add_option("--seed", seed, "override federation.seed");
    run->add_option("--workers", workers, "client threads per round")->check(CLI::PositiveNumber);
    run->add_option("--out", out_dir, "override output.directory");

    std::string validate_path;
    auto* val = app.add_subcommand("validate", "check a config and print the effective configuration");
    val->add_option("config", validate_path, "experiment config (JSON)")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (val->parsed()) {
            const auto c = parse_config(validate_path);
            out << to_json(c).dump(2) << "\n";
            return kExitOk;
        }
        auto c = parse_config(run_path);
        if (seed) c.federation.seed = *seed;
        if (out_dir) c.output.directory = *out_dir;
        validate(c);
        const auto result = run_config(c, workers);
        write_outputs(c, result);
        if (result.best)
            out << "best round " << result.best->round << " accuracy " << fixed6(result.best->accuracy) << "\n";
        out << "final accuracy " << fixed6(result.final_metrics.accuracy) << "\n";
        return kExitOk;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
}

}  // namespace fedss
