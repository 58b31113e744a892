#pragma once

// Run outputs: rounds.csv, removal.csv and summary.json.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "fedss/config.hpp"
#include "fedss/error.hpp"
#include "fedss/federation.hpp"
#include "fedss/metrics.hpp"

namespace fedss {

inline std::string fixed6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

inline std::string rounds_csv(const std::vector<RoundReport>& reports) {
    std::ostringstream out;
    out << "round,accuracy,macro_precision,macro_recall,macro_f1,psnr_db,ssim,selected_samples,removed_samples\n";
    for (const auto& r : reports) {
        out << r.round << ',';
        if (r.metrics) {
            const auto& m = *r.metrics;
            out << fixed6(m.accuracy) << ',' << fixed6(m.macro_precision) << ',' << fixed6(m.macro_recall) << ','
                << fixed6(m.macro_f1) << ',' << fixed6(m.psnr_db) << ',' << fixed6(std::clamp(m.ssim, 0.0, 1.0));
        } else {
            out << ",,,,,";
        }
        out << ',' << r.selected_samples << ',' << r.removed_samples << '\n';
    }
    return out.str();
}

inline std::string removal_csv(const std::vector<RoundReport>& reports) {
    std::ostringstream out;
    out << "round,removed,removed_noisy,removed_clean\n";
    for (const auto& r : reports) {
        if (!r.selection_round) continue;
        out << r.round << ',' << r.removed_samples << ',' << r.removed_noisy << ',' << r.removed_clean << '\n';
    }
    return out.str();
}

inline nlohmann::json metric_json(const MetricRecord& m) {
    return {{"round", m.round},
            {"accuracy", m.accuracy},
            {"macro_precision", m.macro_precision},
            {"macro_recall", m.macro_recall},
            {"macro_f1", m.macro_f1},
            {"psnr_db", m.psnr_db},
            {"ssim", m.ssim}};
}

inline nlohmann::json summary_json(const ExperimentConfig& config, const ExperimentResult& result) {
    nlohmann::json j;
    j["seed"] = config.federation.seed;
    j["best"] = result.best ? metric_json(*result.best) : nlohmann::json(nullptr);
    j["final"] = metric_json(result.final_metrics);
    std::size_t removed = 0, noisy = 0;
    for (const auto& r : result.reports) {
        removed += r.removed_samples;
        noisy += r.removed_noisy;
    }
    j["removal"] = {{"removed", removed},
                    {"removed_noisy", noisy},
                    {"precision", removed ? nlohmann::json(static_cast<double>(noisy) / static_cast<double>(removed))
                                          : nlohmann::json(nullptr)}};
    j["config"] = to_json(config);
    return j;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write " + path.string());
    out << text;
    if (!out) throw InputError("write failed for " + path.string());
}

inline void write_outputs(const ExperimentConfig& config, const ExperimentResult& result) {
    const std::filesystem::path dir(config.output.directory);
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw InputError("cannot create output directory " + dir.string() + ": " + ec.message());
    if (config.output.wants("csv")) {
        write_text(dir / "rounds.csv", rounds_csv(result.reports));
        write_text(dir / "removal.csv", removal_csv(result.reports));
    }
    if (config.output.wants("json")) write_text(dir / "summary.json", summary_json(config, result).dump(2) + "\n");
}

}  // namespace fedss
