#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "fedss/error.hpp"
#include "fedss/matrix.hpp"

namespace fedss {

struct MetricRecord {
    std::size_t round = 0;
    double accuracy = 0.0;
    double macro_precision = 0.0;
    double macro_recall = 0.0;
    double macro_f1 = 0.0;
    double psnr_db = 0.0;
    double ssim = 0.0;  // raw mean, clipped only when written out

    friend bool operator==(const MetricRecord&, const MetricRecord&) = default;
};

struct ClassificationMetrics {
    double accuracy = 0.0;
    double macro_precision = 0.0;
    double macro_recall = 0.0;
    double macro_f1 = 0.0;
    std::vector<double> f1;  // per class
};

/// Macro averages run over all k classes; empty denominators count as 0.
inline ClassificationMetrics classification_metrics(std::span<const int> predictions, std::span<const int> labels,
                                                    std::size_t class_count) {
    if (predictions.size() != labels.size()) throw InputError("classification_metrics: length mismatch");
    std::vector<double> tp(class_count, 0.0), fp(class_count, 0.0), fn(class_count, 0.0);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const auto p = static_cast<std::size_t>(predictions[i]);
        const auto y = static_cast<std::size_t>(labels[i]);
        if (p >= class_count || y >= class_count) throw InputError("classification_metrics: class out of range");
        if (p == y) {
            ++correct;
            tp[y] += 1.0;
        } else {
            fp[p] += 1.0;
            fn[y] += 1.0;
        }
    }
    ClassificationMetrics m;
    m.accuracy = labels.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(labels.size());
    m.f1.resize(class_count);
    for (std::size_t c = 0; c < class_count; ++c) {
        const double prec = tp[c] + fp[c] > 0.0 ? tp[c] / (tp[c] + fp[c]) : 0.0;
        const double rec = tp[c] + fn[c] > 0.0 ? tp[c] / (tp[c] + fn[c]) : 0.0;
        m.f1[c] = prec + rec > 0.0 ? 2.0 * prec * rec / (prec + rec) : 0.0;
        m.macro_precision += prec;
        m.macro_recall += rec;
        m.macro_f1 += m.f1[c];
    }
    const double k = static_cast<double>(class_count);
    m.macro_precision /= k;
    m.macro_recall /= k;
    m.macro_f1 /= k;
    return m;
}

inline constexpr double kPsnrCapDb = 120.0;

inline double psnr_from_mse(double mse, double max_val = 1.0) {
    if (mse < 1e-12) return kPsnrCapDb;
    return 10.0 * std::log10(max_val * max_val / mse);
}

inline double psnr(std::span<const double> reconstruction, std::span<const double> target, double max_val = 1.0) {
    if (reconstruction.size() != target.size()) throw InputError("psnr: size mismatch");
    if (target.empty()) return kPsnrCapDb;
    double acc = 0.0;
    for (std::size_t i = 0; i < target.size(); ++i) acc += (reconstruction[i] - target[i]) * (reconstruction[i] - target[i]);
    return psnr_from_mse(acc / static_cast<double>(target.size()), max_val);
}

inline constexpr std::size_t kSsimWindow = 8;

/// Mean SSIM of two rows x cols images over all 8x8 windows at stride 1, with
/// uniform weights and population statistics. Images smaller than the window
/// are treated as one whole-image window.
inline double ssim(std::span<const double> a, std::span<const double> b, std::size_t rows, std::size_t cols) {
    if (a.size() != b.size() || a.size() != rows * cols) throw InputError("ssim: size mismatch");
    constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    const std::size_t wr = rows < kSsimWindow || cols < kSsimWindow ? rows : kSsimWindow;
    const std::size_t wc = rows < kSsimWindow || cols < kSsimWindow ? cols : kSsimWindow;
    const double count = static_cast<double>(wr * wc);
    double total = 0.0;
    std::size_t windows = 0;
    for (std::size_t r0 = 0; r0 + wr <= rows; ++r0)
        for (std::size_t c0 = 0; c0 + wc <= cols; ++c0) {
            double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
            for (std::size_t r = r0; r < r0 + wr; ++r)
                for (std::size_t c = c0; c < c0 + wc; ++c) {
                    const double x = a[r * cols + c], y = b[r * cols + c];
                    sa += x;
                    sb += y;
                    saa += x * x;
                    sbb += y * y;
                    sab += x * y;
                }
            const double ma = sa / count, mb = sb / count;
            const double va = saa / count - ma * ma;
            const double vb = sbb / count - mb * mb;
            const double cov = sab / count - ma * mb;
            total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            ++windows;
        }
    return total / static_cast<double>(windows);
}

/// Mean SSIM over a batch of images (one image per row).
inline double ssim_batch(const Matrix& a, const Matrix& b, std::size_t rows, std::size_t cols) {
    if (a.rows() != b.rows()) throw InputError("ssim_batch: image count mismatch");
    if (a.rows() == 0) return 1.0;
    double total = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i) total += ssim(a.row(i), b.row(i), rows, cols);
    return total / static_cast<double>(a.rows());
}

/// Keeps the highest-accuracy record; ties keep the earlier one.
struct BestRoundTracker {
    std::optional<MetricRecord> best;

    void update(const MetricRecord& rec) {
        if (!best || rec.accuracy > best->accuracy) best = rec;
    }
};

inline BestRoundTracker best_round_update(BestRoundTracker tracker, const MetricRecord& rec) {
    tracker.update(rec);
    return tracker;
}

}  // namespace fedss
