#pragma once
// Accuracy and uncertainty scores: range-normalized RMSE (percent), Tukey box
// statistics with the mean, noise-floor NRMSE and confidence-interval coverage.
// Missing measured points are NaN and are skipped.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "data_model.hpp"
#include "error.hpp"

namespace fluxlattice {

// 100 * RMSE / (max(measured) - min(measured)) over points present in `measured`.
inline double nrmse(std::span<const double> predicted, std::span<const double> measured) {
    if (predicted.size() != measured.size()) throw ValidationError("nrmse: length mismatch");
    double lo = std::numeric_limits<double>::infinity(), hi = -lo, ss = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < measured.size(); ++i) {
        if (std::isnan(measured[i])) continue;
        lo = std::min(lo, measured[i]);
        hi = std::max(hi, measured[i]);
        const double d = predicted[i] - measured[i];
        ss += d * d;
        ++n;
    }
    if (n < 2) throw InsufficientDataError("nrmse needs at least 2 measured points");
    if (!(hi - lo > 0.0)) throw DegenerateError("nrmse of a constant measured profile (zero range)");
    return 100.0 * std::sqrt(ss / static_cast<double>(n)) / (hi - lo);
}

// RMSE restricted to indices [begin, end), normalized by the range of the whole measured profile.
inline double nrmse_region(std::span<const double> predicted, std::span<const double> measured, std::size_t begin,
                           std::size_t end) {
    if (predicted.size() != measured.size()) throw ValidationError("nrmse: length mismatch");
    if (begin >= end || end > measured.size()) throw ValidationError("nrmse: bad region");
    double lo = std::numeric_limits<double>::infinity(), hi = -lo, ss = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < measured.size(); ++i) {
        if (std::isnan(measured[i])) continue;
        lo = std::min(lo, measured[i]);
        hi = std::max(hi, measured[i]);
        if (i >= begin && i < end) {
            ss += (predicted[i] - measured[i]) * (predicted[i] - measured[i]);
            ++n;
        }
    }
    if (n == 0) throw InsufficientDataError("nrmse: no measured points in region");
    if (!(hi - lo > 0.0)) throw DegenerateError("nrmse of a constant measured profile (zero range)");
    return 100.0 * std::sqrt(ss / static_cast<double>(n)) / (hi - lo);
}

struct BoxStats {
    double median = 0.0;
    double q1 = 0.0;
    double q3 = 0.0;
    double whisker_low = 0.0;
    double whisker_high = 0.0;
    double mean = 0.0;
    std::vector<double> outliers;
};

// Quantile by linear interpolation between closest ranks: position q * (n - 1).
inline double quantile_sorted(std::span<const double> sorted, double q) {
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

inline BoxStats box_stats(std::span<const double> values) {
    if (values.empty()) throw InsufficientDataError("box statistics need at least one value");
    std::vector<double> v(values.begin(), values.end());
    std::sort(v.begin(), v.end());
    BoxStats b;
    b.median = quantile_sorted(v, 0.5);
    b.q1 = quantile_sorted(v, 0.25);
    b.q3 = quantile_sorted(v, 0.75);
    const double iqr = b.q3 - b.q1;
    const double fence_lo = b.q1 - 1.5 * iqr, fence_hi = b.q3 + 1.5 * iqr;
    b.whisker_low = b.q1;
    b.whisker_high = b.q3;
    double sum = 0.0;
    for (double x : v) {
        sum += x;
        if (x < fence_lo || x > fence_hi)
            b.outliers.push_back(x);
        else {
            b.whisker_low = std::min(b.whisker_low, x);
            b.whisker_high = std::max(b.whisker_high, x);
        }
    }
    b.mean = sum / static_cast<double>(v.size());
    return b;
}

// NRMSE of the raw profile against its smoothed estimate; the residual is
// treated as counting noise.
inline double noise_floor_nrmse(std::span<const double> raw, std::span<const double> smoothed) {
    return nrmse(raw, smoothed);
}

// Fraction of truth points inside [ci95_low, ci95_high]; NaN truth points are skipped.
inline double ci_coverage(std::span<const UqPrediction> predictions, std::span<const double> truth) {
    if (predictions.size() != truth.size()) throw ValidationError("ci_coverage: grids not aligned");
    std::size_t inside = 0, n = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (std::isnan(truth[i])) continue;
        ++n;
        if (truth[i] >= predictions[i].ci95_low && truth[i] <= predictions[i].ci95_high) ++inside;
    }
    return n == 0 ? 0.0 : static_cast<double>(inside) / static_cast<double>(n);
}

}  // namespace fluxlattice
