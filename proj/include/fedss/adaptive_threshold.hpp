#pragma once

// Adaptive loss threshold (AT) selection.
//
// Server: lt = ll + (lh - ll) * ltr with ll the minimum of the clients' lowest
// losses and lh the mean of their highest losses. ltr moves by one loss step
// every t_w rounds depending on whether the utility (mean selected-sample
// loss) went down across the last two windows.
// Client: samples under lt are kept; of those at or above it, a uniformly
// random floor(p * |OT|) survive.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "fedss/error.hpp"
#include "fedss/rng.hpp"

namespace fedss {

struct AtState {
    double ltr = 0.0;
    double loss_step = 0.1;
    std::size_t window = 5;
    double retain_prob = 0.75;
    std::vector<std::pair<std::size_t, double>> utility;  // (round, U_R), append-only
    std::optional<double> lt;

    void validate() const {
        if (!(loss_step >= 0.0 && loss_step <= 1.0)) throw ConfigError("at.loss_step must lie in [0, 1]");
        if (window < 1) throw ConfigError("at.window must be at least 1");
        if (!(retain_prob >= 0.0 && retain_prob <= 1.0)) throw ConfigError("at.retain_prob must lie in [0, 1]");
    }
};

/// Per-client loss metadata returned with the model update.
struct LossMeta {
    double low = 0.0;
    double high = 0.0;
    double selected_loss_sum = 0.0;
    std::size_t selected_count = 0;
};

inline double calculate_lt(std::span<const double> lows, std::span<const double> highs, double ltr) {
    if (lows.empty() || highs.empty()) throw ProtocolError("calculate_lt: no client reported loss metadata");
    if (lows.size() != highs.size()) throw ProtocolError("calculate_lt: LLow/LHigh length mismatch");
    const double ll = *std::min_element(lows.begin(), lows.end());
    const double lh = std::accumulate(highs.begin(), highs.end(), 0.0) / static_cast<double>(highs.size());
    return ll + (lh - ll) * ltr;
}

/// Appends U_R (skipped when no sample was selected) and, on window
/// boundaries with two full windows of history, steps ltr up if the older
/// window's utility sum exceeds the newer one's and down otherwise.
inline AtState control_ltr(AtState state, double loss_sum, std::size_t selected, std::size_t round) {
    if (selected > 0) state.utility.emplace_back(round, loss_sum / static_cast<double>(selected));
    const std::size_t w = state.window;
    if (round % w != 0 || round < 2 * w) return state;

    double older = 0.0, newer = 0.0;
    for (const auto& [r, u] : state.utility) {
        if (r > round - 2 * w && r <= round - w) older += u;
        else if (r > round - w && r <= round) newer += u;
    }
    if (older > newer) state.ltr = std::min(state.ltr + state.loss_step, 1.0);
    else state.ltr = std::max(state.ltr - state.loss_step, 0.0);
    return state;
}

/// Ascending indices of the retained samples.
inline std::vector<std::size_t> select_samples(std::span<const double> losses, double lt, double retain_prob,
                                               Engine& rng) {
    if (!(retain_prob >= 0.0 && retain_prob <= 1.0)) throw ConfigError("retain probability must lie in [0, 1]");
    std::vector<std::size_t> under, over;
    for (std::size_t i = 0; i < losses.size(); ++i) (losses[i] >= lt ? over : under).push_back(i);
    const auto keep = static_cast<std::size_t>(std::floor(retain_prob * static_cast<double>(over.size())));
    std::vector<std::size_t> out = std::move(under);
    for (auto k : sample_without_replacement(rng, over.size(), keep)) out.push_back(over[k]);
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace fedss
