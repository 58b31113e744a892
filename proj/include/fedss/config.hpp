#pragma once

// Experiment configuration: a JSON document of nested blocks. Parsing is
// strict (unknown keys are errors) and every error names the offending key
// path. to_json() writes the fully-defaulted effective configuration, which
// parses back to an identical ExperimentConfig.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "fedss/datasets.hpp"
#include "fedss/error.hpp"
#include "fedss/federation.hpp"
#include "fedss/mtae.hpp"
#include "fedss/nn.hpp"

namespace fedss {

struct DatasetConfig {
    enum class Source { synth, idx };
    Source source = Source::synth;
    std::size_t class_count = 4;
    std::size_t train_per_class = 300;
    std::size_t test_per_class = 100;
    std::size_t image_side = 12;
    std::string train_images, train_labels, test_images, test_labels;

    friend bool operator==(const DatasetConfig&, const DatasetConfig&) = default;
};

struct NoiseConfig {
    NoiseKind kind = NoiseKind::none;
    double rate = 0.4;
    // open-set source: a synthetic dataset with disjoint templates, or an IDX pair
    DatasetConfig::Source open_source = DatasetConfig::Source::synth;
    std::size_t open_per_class = 0;  // 0: as many as the training set per class
    std::string open_images, open_labels;

    friend bool operator==(const NoiseConfig&, const NoiseConfig&) = default;
};

struct ModelConfig {
    std::size_t embed_dim = 32;
    std::vector<std::size_t> encoder_hidden{128};
    std::vector<std::size_t> decoder_hidden{128};
    std::vector<std::size_t> classifier_hidden{};
    LossWeights loss_weights;
    SgdConfig sgd;

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct OutputConfig {
    std::string directory = "out";
    std::vector<std::string> formats{"csv", "json"};

    bool wants(const std::string& f) const {
        return std::find(formats.begin(), formats.end(), f) != formats.end();
    }

    friend bool operator==(const OutputConfig&, const OutputConfig&) = default;
};

struct ExperimentConfig {
    DatasetConfig dataset;
    NoiseConfig noise;
    PartitionScheme partition;
    ModelConfig model;
    FederationConfig federation;
    SelectionParams selection;
    OutputConfig output;

    friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

namespace detail {

using nlohmann::json;

/// Strict view of one JSON object: every accessed key is remembered and
/// finish() rejects the rest.
class ObjectReader {
public:
    ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(where_self() + ": expected an object");
    }

    bool has(const std::string& key) const { return j_.contains(key) && !j_.at(key).is_null(); }

    const json* get(const std::string& key) {
        seen_.insert(key);
        return j_.contains(key) ? &j_.at(key) : nullptr;
    }

    std::string key_path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    ObjectReader child(const std::string& key) {
        const json* v = get(key);
        static const json empty = json::object();
        if (v == nullptr || v->is_null()) return ObjectReader(empty, key_path(key));
        return ObjectReader(*v, key_path(key));
    }

    void require(const std::string& key) const {
        if (!has(key)) throw ConfigError(key_path(key) + ": missing required key");
    }

    double number(const std::string& key, double fallback) {
        const json* v = get(key);
        if (v == nullptr || v->is_null()) return fallback;
        if (!v->is_number()) throw ConfigError(key_path(key) + ": expected a number");
        const double d = v->get<double>();
        if (!std::isfinite(d)) throw ConfigError(key_path(key) + ": must be finite");
        return d;
    }

    std::optional<double> optional_number(const std::string& key, std::optional<double> fallback) {
        const json* v = get(key);
        if (v == nullptr) return fallback;
        if (v->is_null()) return std::nullopt;
        return number(key, 0.0);
    }

    std::size_t count(const std::string& key, std::size_t fallback) {
        const json* v = get(key);
        if (v == nullptr || v->is_null()) return fallback;
        if (!v->is_number_integer() || v->get<std::int64_t>() < 0)
            throw ConfigError(key_path(key) + ": expected a nonnegative integer");
        return v->get<std::size_t>();
    }

    std::uint64_t seed(const std::string& key, std::uint64_t fallback) {
        const json* v = get(key);
        if (v == nullptr || v->is_null()) return fallback;
        if (!v->is_number_unsigned() && !(v->is_number_integer() && v->get<std::int64_t>() >= 0))
            throw ConfigError(key_path(key) + ": expected a nonnegative integer");
        return v->get<std::uint64_t>();
    }

    bool boolean(const std::string& key, bool fallback) {
        const json* v = get(key);
        if (v == nullptr || v->is_null()) return fallback;
        if (!v->is_boolean()) throw ConfigError(key_path(key) + ": expected true or false");
        return v->get<bool>();
    }

    std::string string(const std::string& key, const std::string& fallback) {
        const json* v = get(key);
        if (v == nullptr || v->is_null()) return fallback;
        if (!v->is_string()) throw ConfigError(key_path(key) + ": expected a string");
        return v->get<std::string>();
    }

    std::vector<std::size_t> counts(const std::string& key, const std::vector<std::size_t>& fallback) {
        const json* v = get(key);
        if (v == nullptr || v->is_null()) return fallback;
        if (!v->is_array()) throw ConfigError(key_path(key) + ": expected an array of integers");
        std::vector<std::size_t> out;
        for (const auto& e : *v) {
            if (!e.is_number_integer() || e.get<std::int64_t>() <= 0)
                throw ConfigError(key_path(key) + ": expected positive integers");
            out.push_back(e.get<std::size_t>());
        }
        return out;
    }

    std::vector<std::string> strings(const std::string& key, const std::vector<std::string>& fallback) {
        const json* v = get(key);
        if (v == nullptr || v->is_null()) return fallback;
        if (!v->is_array()) throw ConfigError(key_path(key) + ": expected an array of strings");
        std::vector<std::string> out;
        for (const auto& e : *v) {
            if (!e.is_string()) throw ConfigError(key_path(key) + ": expected strings");
            out.push_back(e.get<std::string>());
        }
        return out;
    }

    template <class Enum>
    Enum choice(const std::string& key, Enum fallback, std::initializer_list<std::pair<const char*, Enum>> options) {
        const json* v = get(key);
        if (v == nullptr || v->is_null()) return fallback;
        if (!v->is_string()) throw ConfigError(key_path(key) + ": expected a string");
        const auto s = v->get<std::string>();
        std::string allowed;
        for (const auto& [name, value] : options) {
            if (s == name) return value;
            allowed += std::string(allowed.empty() ? "" : ", ") + name;
        }
        throw ConfigError(key_path(key) + ": unknown value '" + s + "' (expected one of " + allowed + ")");
    }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!seen_.count(it.key())) throw ConfigError(key_path(it.key()) + ": unknown key");
    }

private:
    std::string where_self() const { return path_.empty() ? "<root>" : path_; }

    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

inline const char* name(DatasetConfig::Source s) { return s == DatasetConfig::Source::synth ? "synth" : "idx"; }

inline const char* name(NoiseKind k) {
    switch (k) {
        case NoiseKind::none: return "none";
        case NoiseKind::closed_set: return "closed_set";
        case NoiseKind::open_set: return "open_set";
    }
    return "none";
}

inline const char* name(SelectionMode m) {
    switch (m) {
        case SelectionMode::none: return "none";
        case SelectionMode::adaptive_threshold: return "at";
        case SelectionMode::ocsvm: return "ocsvm";
        case SelectionMode::iforest: return "iforest";
    }
    return "none";
}

inline const char* name(SelectionSpace s) { return s == SelectionSpace::loss2d ? "loss2d" : "feature"; }

inline const char* name(PartitionScheme::Kind k) {
    return k == PartitionScheme::Kind::dirichlet ? "dirichlet" : "shard";
}

}  // namespace detail

inline void validate(const ExperimentConfig& c) {
    const auto& d = c.dataset;
    if (d.source == DatasetConfig::Source::synth) {
        if (d.class_count < 2) throw ConfigError("dataset.class_count: must be at least 2");
        if (d.train_per_class < 1) throw ConfigError("dataset.train_per_class: must be at least 1");
        if (d.image_side < 2) throw ConfigError("dataset.image_side: must be at least 2");
        if (d.train_per_class * d.class_count < c.federation.clients)
            throw ConfigError("federation.clients: exceeds the number of training samples (dataset.train_per_class * dataset.class_count)");
    } else {
        for (const auto* p : {&d.train_images, &d.train_labels, &d.test_images, &d.test_labels})
            if (p->empty()) throw ConfigError("dataset: idx source needs train_images, train_labels, test_images and test_labels");
    }
    if (!(c.noise.rate >= 0.0 && c.noise.rate <= 1.0)) throw ConfigError("noise.rate: must lie in [0, 1]");
    if (c.noise.kind == NoiseKind::open_set && c.noise.open_source == DatasetConfig::Source::idx &&
        (c.noise.open_images.empty() || c.noise.open_labels.empty()))
        throw ConfigError("noise.open_set_source: idx source needs images and labels");
    if (c.partition.kind == PartitionScheme::Kind::dirichlet && !(c.partition.alpha > 0.0))
        throw ConfigError("partition.alpha: must be positive");
    if (c.partition.shards_per_client < 1) throw ConfigError("partition.shards_per_client: must be at least 1");
    if (c.model.embed_dim < 2) throw ConfigError("model.embed_dim: must be at least 2");
    try {
        c.model.loss_weights.validate();
        c.model.sgd.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(std::string("model: ") + e.what());
    }
    const auto& f = c.federation;
    if (f.rounds > 0 && f.warmup_round >= f.rounds)
        throw ConfigError("federation.warmup_round (" + std::to_string(f.warmup_round) +
                          ") must be less than federation.rounds (" + std::to_string(f.rounds) + ")");
    f.validate();
    if (!(c.selection.contamination >= 0.0 && c.selection.contamination <= 1.0))
        throw ConfigError("selection.contamination: must lie in [0, 1], got " + std::to_string(c.selection.contamination));
    if (f.mode == SelectionMode::ocsvm && !(c.selection.contamination > 0.0))
        throw ConfigError("selection.contamination: must be positive for the one-class SVM");
    c.selection.validate();
    if (c.output.directory.empty()) throw ConfigError("output.directory: must not be empty");
    for (const auto& fmt : c.output.formats)
        if (fmt != "csv" && fmt != "json") throw ConfigError("output.formats: unknown format '" + fmt + "'");
}

inline ExperimentConfig parse_config_json(const nlohmann::json& root) {
    using detail::ObjectReader;
    ExperimentConfig c;
    ObjectReader top(root, "");
    top.require("dataset");
    top.require("federation");

    {
        auto r = top.child("dataset");
        r.require("source");
        auto& d = c.dataset;
        d.source = r.choice("source", d.source, {{"synth", DatasetConfig::Source::synth}, {"idx", DatasetConfig::Source::idx}});
        d.class_count = r.count("class_count", d.class_count);
        d.train_per_class = r.count("train_per_class", d.train_per_class);
        d.test_per_class = r.count("test_per_class", d.test_per_class);
        d.image_side = r.count("image_side", d.image_side);
        d.train_images = r.string("train_images", d.train_images);
        d.train_labels = r.string("train_labels", d.train_labels);
        d.test_images = r.string("test_images", d.test_images);
        d.test_labels = r.string("test_labels", d.test_labels);
        r.finish();
    }
    {
        auto r = top.child("noise");
        auto& n = c.noise;
        n.kind = r.choice("kind", n.kind,
                          {{"none", NoiseKind::none}, {"closed_set", NoiseKind::closed_set}, {"open_set", NoiseKind::open_set}});
        n.rate = r.number("rate", n.rate);
        auto s = r.child("open_set_source");
        n.open_source = s.choice("source", n.open_source,
                                 {{"synth", DatasetConfig::Source::synth}, {"idx", DatasetConfig::Source::idx}});
        n.open_per_class = s.count("per_class", n.open_per_class);
        n.open_images = s.string("images", n.open_images);
        n.open_labels = s.string("labels", n.open_labels);
        s.finish();
        r.finish();
    }
    {
        auto r = top.child("partition");
        auto& p = c.partition;
        p.kind = r.choice("scheme", p.kind,
                          {{"dirichlet", PartitionScheme::Kind::dirichlet}, {"shard", PartitionScheme::Kind::shard}});
        p.alpha = r.number("alpha", p.alpha);
        p.shards_per_client = r.count("shards_per_client", p.shards_per_client);
        r.finish();
    }
    {
        auto r = top.child("model");
        auto& m = c.model;
        m.embed_dim = r.count("embed_dim", m.embed_dim);
        m.encoder_hidden = r.counts("encoder_hidden", m.encoder_hidden);
        m.decoder_hidden = r.counts("decoder_hidden", m.decoder_hidden);
        m.classifier_hidden = r.counts("classifier_hidden", m.classifier_hidden);
        auto w = r.child("loss_weights");
        m.loss_weights.rec = w.number("rec", m.loss_weights.rec);
        m.loss_weights.cls = w.number("cls", m.loss_weights.cls);
        m.loss_weights.reg = w.number("reg", m.loss_weights.reg);
        w.finish();
        auto s = r.child("sgd");
        m.sgd.learning_rate = s.number("learning_rate", m.sgd.learning_rate);
        m.sgd.weight_decay = s.number("weight_decay", m.sgd.weight_decay);
        m.sgd.batch_size = s.count("batch_size", m.sgd.batch_size);
        m.sgd.local_epochs = s.count("local_epochs", m.sgd.local_epochs);
        s.finish();
        r.finish();
    }
    {
        auto r = top.child("federation");
        r.require("rounds");
        auto& f = c.federation;
        f.rounds = r.count("rounds", f.rounds);
        f.clients = r.count("clients", f.clients);
        // P defaults to a tenth of N, rounded up.
        f.clients_per_round = r.count("clients_per_round", (f.clients + 9) / 10);
        f.warmup_round = r.count("warmup_round", f.warmup_round);
        f.refit_interval = r.count("refit_interval", f.refit_interval);
        f.eval_interval = r.count("eval_interval", f.eval_interval);
        f.seed = r.seed("seed", f.seed);
        r.finish();
    }
    {
        auto r = top.child("selection");
        auto& s = c.selection;
        auto& f = c.federation;
        f.mode = r.choice("mode", f.mode,
                          {{"none", SelectionMode::none},
                           {"at", SelectionMode::adaptive_threshold},
                           {"ocsvm", SelectionMode::ocsvm},
                           {"iforest", SelectionMode::iforest}});
        f.space = r.choice("space", f.space, {{"loss2d", SelectionSpace::loss2d}, {"feature", SelectionSpace::feature}});
        s.contamination = r.number("contamination", s.contamination);
        auto o = r.child("ocsvm");
        s.ocsvm_gamma = o.optional_number("gamma", s.ocsvm_gamma);
        s.ocsvm_tol = o.number("tol", s.ocsvm_tol);
        o.finish();
        auto i = r.child("iforest");
        s.iforest_trees = i.count("trees", s.iforest_trees);
        s.iforest_subsample = i.count("subsample", s.iforest_subsample);
        i.finish();
        auto a = r.child("at");
        s.at_loss_step = a.number("loss_step", s.at_loss_step);
        s.at_window = a.count("window", s.at_window);
        s.at_retain_prob = a.number("retain_prob", s.at_retain_prob);
        a.finish();
        auto v = r.child("svdd");
        s.svdd_enabled = v.boolean("enabled", s.svdd_enabled);
        s.svdd_nu = v.number("nu", s.svdd_nu);
        s.svdd_activation_round = v.count("activation_round", s.svdd_activation_round);
        v.finish();
        r.finish();
    }
    {
        auto r = top.child("output");
        c.output.directory = r.string("directory", c.output.directory);
        c.output.formats = r.strings("formats", c.output.formats);
        r.finish();
    }
    top.finish();
    validate(c);
    return c;
}

inline ExperimentConfig parse_config_text(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    return parse_config_json(j);
}

inline ExperimentConfig parse_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

inline nlohmann::json to_json(const ExperimentConfig& c) {
    using detail::name;
    nlohmann::json j;
    const auto& d = c.dataset;
    j["dataset"] = {{"source", name(d.source)},         {"class_count", d.class_count},
                    {"train_per_class", d.train_per_class}, {"test_per_class", d.test_per_class},
                    {"image_side", d.image_side},       {"train_images", d.train_images},
                    {"train_labels", d.train_labels},   {"test_images", d.test_images},
                    {"test_labels", d.test_labels}};
    const auto& n = c.noise;
    j["noise"] = {{"kind", name(n.kind)},
                  {"rate", n.rate},
                  {"open_set_source",
                   {{"source", name(n.open_source)},
                    {"per_class", n.open_per_class},
                    {"images", n.open_images},
                    {"labels", n.open_labels}}}};
    j["partition"] = {{"scheme", name(c.partition.kind)},
                      {"alpha", c.partition.alpha},
                      {"shards_per_client", c.partition.shards_per_client}};
    const auto& m = c.model;
    j["model"] = {{"embed_dim", m.embed_dim},
                  {"encoder_hidden", m.encoder_hidden},
                  {"decoder_hidden", m.decoder_hidden},
                  {"classifier_hidden", m.classifier_hidden},
                  {"loss_weights", {{"rec", m.loss_weights.rec}, {"cls", m.loss_weights.cls}, {"reg", m.loss_weights.reg}}},
                  {"sgd",
                   {{"learning_rate", m.sgd.learning_rate},
                    {"weight_decay", m.sgd.weight_decay},
                    {"batch_size", m.sgd.batch_size},
                    {"local_epochs", m.sgd.local_epochs}}}};
    const auto& f = c.federation;
    j["federation"] = {{"rounds", f.rounds},
                       {"clients", f.clients},
                       {"clients_per_round", f.clients_per_round},
                       {"warmup_round", f.warmup_round},
                       {"refit_interval", f.refit_interval},
                       {"eval_interval", f.eval_interval},
                       {"seed", f.seed}};
    const auto& s = c.selection;
    nlohmann::json gamma = s.ocsvm_gamma ? nlohmann::json(*s.ocsvm_gamma) : nlohmann::json(nullptr);
    j["selection"] = {{"mode", name(f.mode)},
                      {"space", name(f.space)},
                      {"contamination", s.contamination},
                      {"ocsvm", {{"gamma", gamma}, {"tol", s.ocsvm_tol}}},
                      {"iforest", {{"trees", s.iforest_trees}, {"subsample", s.iforest_subsample}}},
                      {"at", {{"loss_step", s.at_loss_step}, {"window", s.at_window}, {"retain_prob", s.at_retain_prob}}},
                      {"svdd", {{"enabled", s.svdd_enabled}, {"nu", s.svdd_nu}, {"activation_round", s.svdd_activation_round}}}};
    j["output"] = {{"directory", c.output.directory}, {"formats", c.output.formats}};
    return j;
}

}  // namespace fedss
