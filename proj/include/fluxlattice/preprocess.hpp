#pragma once
// Preprocessing of raw wire scans: decay correction, per-profile z-scoring,
// Savitzky-Golay smoothing and gap filling.

#include <cmath>
#include <map>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "data_model.hpp"
#include "error.hpp"

namespace fluxlattice {

struct PreprocessConfig {
    double half_life = 12.7;  // hours, Cu-64
    int sg_window = 11;
    int sg_polyorder = 3;
    bool normalize = true;

    void validate() const {
        if (!(half_life > 0.0)) throw ConfigError("half_life must be > 0");
        if (sg_window < 3 || sg_window % 2 == 0) throw ConfigError("sg_window must be odd and >= 3");
        if (sg_polyorder < 0 || sg_polyorder >= sg_window) throw ConfigError("need 0 <= sg_polyorder < sg_window");
    }
};

// Scales every count by 2^(dt / half_life), dt = hours from reference_time to scan start.
inline std::vector<FluxProfile> decay_correct(std::span<const FluxProfile> profiles, Timestamp reference_time,
                                              double half_life) {
    if (!(half_life > 0.0)) throw ConfigError("half_life must be > 0");
    std::vector<FluxProfile> out(profiles.begin(), profiles.end());
    for (auto& p : out) {
        if (p.scan_start_time < reference_time)
            throw ValidationError(p.key().str() + ": scan starts before the decay reference time");
        const double factor = std::exp2(hours_between(reference_time, p.scan_start_time) / half_life);
        for (auto& c : p.counts) c.count *= factor;
    }
    return out;
}

// Decay-corrects each cycle back to the scan start of its first wire.
inline CycleDataset decay_correct_cycles(const CycleDataset& ds, double half_life) {
    std::map<std::string, Timestamp> reference;
    for (const auto& p : ds.profiles) {
        auto [it, fresh] = reference.emplace(p.cycle_id, p.scan_start_time);
        if (!fresh) it->second = std::min(it->second, p.scan_start_time);
    }
    CycleDataset out = ds;
    for (auto& p : out.profiles) p = decay_correct(std::span(&p, 1), reference.at(p.cycle_id), half_life).front();
    return out;
}

struct ZScoreStats {
    double mean = 0.0;
    double std = 1.0;  // population standard deviation
};

inline ZScoreStats zscore_stats(std::span<const double> values) {
    if (values.size() < 2) throw InsufficientDataError("z-score needs at least 2 values");
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / static_cast<double>(values.size()));
    if (!(sd > 0.0) || sd <= 1e-14 * std::max(1.0, std::abs(mean)))
        throw DegenerateError("z-score of a constant sequence (zero variance)");
    return {mean, sd};
}

inline std::vector<double> zscore(std::span<const double> values) {
    const ZScoreStats s = zscore_stats(values);
    std::vector<double> out(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) out[i] = (values[i] - s.mean) / s.std;
    return out;
}

// Row j holds the weights that evaluate, at window offset j, the least-squares
// polynomial of degree `polyorder` fitted to the whole window.
inline Eigen::MatrixXd savgol_projection(int window, int polyorder) {
    if (window < 1 || window % 2 == 0) throw ConfigError("Savitzky-Golay window must be odd");
    if (polyorder < 0 || polyorder >= window) throw ConfigError("Savitzky-Golay polyorder must be < window");
    const int half = window / 2;
    Eigen::MatrixXd vander(window, polyorder + 1);
    for (int j = 0; j < window; ++j) {
        const double t = half == 0 ? 0.0 : static_cast<double>(j - half) / half;
        double pw = 1.0;
        for (int d = 0; d <= polyorder; ++d, pw *= t) vander(j, d) = pw;
    }
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(vander);
    const Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(window, polyorder + 1);
    return q * q.transpose();
}

inline std::vector<double> savgol_smooth(std::span<const double> values, int window, int polyorder) {
    if (window < 3 || window % 2 == 0) throw ConfigError("Savitzky-Golay window must be odd and >= 3");
    if (polyorder < 0 || polyorder >= window) throw ConfigError("Savitzky-Golay polyorder must be < window");
    const std::size_t n = values.size();
    const std::size_t w = static_cast<std::size_t>(window);
    if (n < w) throw ConfigError("sequence shorter than Savitzky-Golay window");
    const Eigen::MatrixXd h = savgol_projection(window, polyorder);
    const std::size_t half = w / 2;

    auto apply = [&](std::size_t row, std::size_t start) {
        double acc = 0.0;
        for (std::size_t j = 0; j < w; ++j) acc += h(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(j)) * values[start + j];
        return acc;
    };
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (i < half)
            out[i] = apply(i, 0);
        else if (i + half >= n)
            out[i] = apply(w - (n - i), n - w);
        else
            out[i] = apply(half, i - half);
    }
    return out;
}

// Completes a profile onto the full axial grid: interior gaps by linear
// interpolation, edges by linear extrapolation from the two nearest points.
inline FluxProfile fill_missing(const FluxProfile& profile, int grid_size = kAxialGridSize) {
    if (profile.counts.size() < 2) throw InsufficientDataError(profile.key().str() + ": gap filling needs >= 2 points");
    const auto& pts = profile.counts;
    FluxProfile out = profile;
    out.axial_grid_size = grid_size;
    out.counts.clear();
    out.counts.reserve(static_cast<std::size_t>(grid_size));
    auto line = [](const AxialCount& a, const AxialCount& b, int x) {
        const double slope = (b.count - a.count) / (b.axial_index - a.axial_index);
        return a.count + slope * (x - a.axial_index);
    };
    std::size_t next = 0;  // first present point with axial_index >= x
    for (int x = 0; x < grid_size; ++x) {
        while (next < pts.size() && pts[next].axial_index < x) ++next;
        double v;
        if (next < pts.size() && pts[next].axial_index == x)
            v = pts[next].count;
        else if (next == 0)
            v = line(pts[0], pts[1], x);
        else if (next == pts.size())
            v = line(pts[pts.size() - 2], pts.back(), x);
        else
            v = line(pts[next - 1], pts[next], x);
        out.counts.push_back({x, v});
    }
    return out;
}

// N x grid matrix of complete shape vectors, one row per profile.
struct ShapeMatrix {
    Eigen::MatrixXd rows;
    std::vector<ProfileKey> keys;
};

// One profile taken through z-score -> smooth -> fill. Expects decay-corrected counts.
inline std::vector<double> clustering_shape(const FluxProfile& corrected, const PreprocessConfig& cfg) {
    const std::vector<double> raw = corrected.values();
    std::vector<double> v = cfg.normalize ? zscore(raw) : raw;
    v = savgol_smooth(v, cfg.sg_window, cfg.sg_polyorder);
    FluxProfile smoothed = corrected;
    smoothed.normalized = cfg.normalize;
    for (std::size_t i = 0; i < v.size(); ++i) smoothed.counts[i].count = v[i];
    const FluxProfile filled = fill_missing(smoothed, corrected.axial_grid_size);
    return filled.values();
}

// decay_correct -> zscore -> savgol_smooth -> fill_missing for every profile
// of `profiles` (references into a dataset whose cycle reference times are
// taken from `ds`).
inline ShapeMatrix preprocess_for_clustering(const CycleDataset& ds, std::span<const FluxProfile* const> profiles,
                                             const PreprocessConfig& cfg) {
    cfg.validate();
    if (profiles.empty()) throw InsufficientDataError("no profiles to preprocess");
    std::map<std::string, Timestamp> reference;
    for (const auto& p : ds.profiles) {
        auto [it, fresh] = reference.emplace(p.cycle_id, p.scan_start_time);
        if (!fresh) it->second = std::min(it->second, p.scan_start_time);
    }
    const int grid = profiles.front()->axial_grid_size;
    ShapeMatrix out;
    out.rows.resize(static_cast<Eigen::Index>(profiles.size()), grid);
    for (std::size_t r = 0; r < profiles.size(); ++r) {
        const FluxProfile& p = *profiles[r];
        if (p.axial_grid_size != grid) throw ValidationError("profiles disagree on axial grid size");
        const FluxProfile corrected = decay_correct(std::span(&p, 1), reference.at(p.cycle_id), cfg.half_life).front();
        const auto shape = clustering_shape(corrected, cfg);
        for (int c = 0; c < grid; ++c) out.rows(static_cast<Eigen::Index>(r), c) = shape[static_cast<std::size_t>(c)];
        out.keys.push_back(p.key());
    }
    return out;
}

inline ShapeMatrix preprocess_for_clustering(const CycleDataset& ds, const PreprocessConfig& cfg) {
    std::vector<const FluxProfile*> all;
    for (const auto& p : ds.profiles) all.push_back(&p);
    return preprocess_for_clustering(ds, all, cfg);
}

// Regression view of one decay-corrected profile: z-scored, unsmoothed counts
// with point-wise noise sqrt(count) expressed in the same z units.
struct RegressionProfile {
    ProfileKey key;
    double bank_position = 0.0;
    std::vector<int> axial_index;
    std::vector<double> target;
    std::vector<double> noise_sd;
    ZScoreStats stats;
};

inline RegressionProfile regression_profile(const FluxProfile& corrected) {
    RegressionProfile r;
    r.key = corrected.key();
    r.bank_position = corrected.bank_position;
    const std::vector<double> raw = corrected.values();
    r.stats = zscore_stats(raw);
    for (const auto& c : corrected.counts) {
        r.axial_index.push_back(c.axial_index);
        r.target.push_back((c.count - r.stats.mean) / r.stats.std);
        r.noise_sd.push_back(std::sqrt(std::max(c.count, 0.0)) / r.stats.std);
    }
    return r;
}

}  // namespace fluxlattice
