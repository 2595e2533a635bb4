#pragma once
// Seeded synthetic stand-in for a multi-cycle wire-scan campaign. Each
// assembly's profiles come from 2-3 shape families with known labels:
//   family 0  chopped cosine, tilted linearly with bank position
//   family 1  family 0 plus a Gaussian peak near the top of the grid
//   family 2  family 0 shifted axially (misplaced-wire outlier)

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "data_model.hpp"
#include "error.hpp"
#include "rng.hpp"

namespace fluxlattice {

enum class NoiseModel { poisson, gaussian };

struct AssemblySpec {
    std::string id;
    std::vector<double> fractions{0.62, 0.38};  // families 0 and 1
    int outliers = 0;                           // singleton family-2 profiles
};

struct SynthConfig {
    int n_cycles = 100;
    std::vector<AssemblySpec> assemblies{{"C5", {0.62, 0.38}, 0}, {"E5", {0.55, 0.45}, 0}};
    double base_intensity = 400.0;  // expected peak count
    double bump_amplitude = 0.35;   // relative to the base peak
    double bump_center = 0.9;       // axial position in [0, 1]
    double bump_width = 0.04;
    double bank_tilt = 0.3;         // relative tilt across the grid per unit bank offset
    double outlier_shift = 0.1;
    double chop_length = 1.4;       // cosine period half-length in grid units
    double missing_rate = 0.05;
    double bank_low = 0.2, bank_high = 0.8;
    NoiseModel noise = NoiseModel::poisson;
    double gaussian_sigma = 0.0;    // counts, for NoiseModel::gaussian
    double half_life = 12.7;        // hours; counts are decayed by scan delay
    double scan_interval_minutes = 20.0;
    double cycle_spacing_days = 28.0;
    std::size_t hold_out_last = 10;
    int axial_grid_size = kAxialGridSize;
    std::uint64_t seed = 0;

    void validate() const {
        if (n_cycles < 1) throw ConfigError("n_cycles must be >= 1");
        if (assemblies.empty()) throw ConfigError("at least one assembly required");
        for (const auto& a : assemblies) {
            if (a.id.empty()) throw ConfigError("assembly id must be non-empty");
            if (a.fractions.empty() || a.fractions.size() > 2)
                throw ConfigError("assembly " + a.id + ": one or two family fractions expected");
            double sum = 0.0;
            for (double f : a.fractions) {
                if (!(f >= 0.0)) throw ConfigError("assembly " + a.id + ": negative mixing fraction");
                sum += f;
            }
            if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("assembly " + a.id + ": mixing fractions must sum to 1");
            if (a.outliers < 0 || a.outliers >= n_cycles) throw ConfigError("assembly " + a.id + ": bad outlier count");
        }
        if (!(base_intensity > 0.0)) throw ConfigError("base_intensity must be > 0");
        if (!(bump_center >= 0.8 && bump_center <= 1.0)) throw ConfigError("bump_center must lie in the upper 20% of the grid");
        if (!(bump_width > 0.0)) throw ConfigError("bump_width must be > 0");
        if (!(missing_rate >= 0.0 && missing_rate < 1.0)) throw ConfigError("missing_rate must lie in [0, 1)");
        if (!(bank_low >= 0.0 && bank_high <= 1.0 && bank_low <= bank_high)) throw ConfigError("bank range must lie in [0, 1]");
        if (!(gaussian_sigma >= 0.0)) throw ConfigError("gaussian_sigma must be >= 0");
        if (!(half_life > 0.0)) throw ConfigError("half_life must be > 0");
        if (!(chop_length > 1.0)) throw ConfigError("chop_length must exceed 1");
        if (axial_grid_size < 2) throw ConfigError("axial grid too small");
    }
};

// Relative intensity of `family` at axial position in [0, 1].
inline double truth_shape(int family, double bank_position, double axial, const SynthConfig& cfg) {
    if (!(axial >= 0.0 && axial <= 1.0)) throw ValidationError("axial position must lie in [0, 1]");
    auto base = [&](double a) {
        const double cosine = std::cos(std::numbers::pi * (a - 0.5) / cfg.chop_length);
        return cosine * (1.0 + cfg.bank_tilt * (bank_position - 0.5) * (2.0 * a - 1.0));
    };
    switch (family) {
        case 0: return base(axial);
        case 1: {
            const double d = (axial - cfg.bump_center) / cfg.bump_width;
            return base(axial) + cfg.bump_amplitude * std::exp(-0.5 * d * d);
        }
        case 2: return base(axial - cfg.outlier_shift);
        default: throw ConfigError("unknown shape family " + std::to_string(family));
    }
}

inline double axial_position(int index, int grid) { return (index + 0.5) / grid; }

struct SynthOutput {
    CycleDataset dataset;
    std::map<std::string, Clustering> truth_labels;         // per assembly, historical order
    std::map<ProfileKey, int> families;                      // raw family id per profile
    std::map<ProfileKey, std::vector<double>> truth_counts;  // noise-free, decay-corrected, full grid
};

namespace detail {

// Exact per-family counts by largest remainder.
inline std::vector<int> stratified_counts(const std::vector<double>& fractions, int n) {
    std::vector<int> counts;
    std::vector<std::pair<double, std::size_t>> rem;
    int assigned = 0;
    for (std::size_t f = 0; f < fractions.size(); ++f) {
        const double want = fractions[f] * n;
        const int c = static_cast<int>(std::floor(want + 1e-9));
        counts.push_back(c);
        assigned += c;
        rem.emplace_back(want - c, f);
    }
    std::stable_sort(rem.begin(), rem.end(), [](auto& a, auto& b) { return a.first > b.first; });
    for (std::size_t i = 0; assigned < n; ++i, ++assigned) ++counts[rem[i % rem.size()].second];
    return counts;
}

inline std::string cycle_name(int i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "C%03d", i + 1);
    return buf;
}

}  // namespace detail

inline SynthOutput generate(const SynthConfig& cfg) {
    cfg.validate();
    SynthOutput out;
    const int n = cfg.n_cycles, grid = cfg.axial_grid_size;
    using namespace std::chrono;
    const Timestamp start = sys_seconds{sys_days{year{2020} / 1 / 1}};

    // bank position is a cycle attribute shared by all assemblies
    std::vector<double> bank(static_cast<std::size_t>(n));
    {
        Rng rng = make_rng(cfg.seed, {0x62616e6bULL});
        std::uniform_real_distribution<double> u(cfg.bank_low, cfg.bank_high);
        for (auto& b : bank) b = cfg.bank_low == cfg.bank_high ? cfg.bank_low : u(rng);
    }

    for (std::size_t ai = 0; ai < cfg.assemblies.size(); ++ai) {
        const AssemblySpec& spec = cfg.assemblies[ai];
        const std::uint64_t akey = hash_string(spec.id);
        std::vector<int> fam;
        const auto counts = detail::stratified_counts(spec.fractions, n - spec.outliers);
        for (std::size_t f = 0; f < counts.size(); ++f) fam.insert(fam.end(), static_cast<std::size_t>(counts[f]), static_cast<int>(f));
        fam.insert(fam.end(), static_cast<std::size_t>(spec.outliers), 2);
        Rng frng = make_rng(cfg.seed, {0x66616dULL, akey});
        std::shuffle(fam.begin(), fam.end(), frng);

        std::vector<int> labels;
        std::vector<ProfileKey> keys;
        for (int c = 0; c < n; ++c) {
            const int family = fam[static_cast<std::size_t>(c)];
            FluxProfile p;
            p.cycle_id = detail::cycle_name(c);
            p.assembly_id = spec.id;
            p.bank_position = bank[static_cast<std::size_t>(c)];
            p.axial_grid_size = grid;
            const auto delay = minutes{static_cast<long>(std::llround(cfg.scan_interval_minutes * static_cast<double>(ai)))};
            const Timestamp cycle_start =
                start + seconds{static_cast<long>(std::llround(cfg.cycle_spacing_days * 86400.0 * c))};
            p.scan_start_time = cycle_start + delay;
            const double decay = std::exp2(-hours_between(cycle_start, p.scan_start_time) / cfg.half_life);

            Rng rng = make_rng(cfg.seed, {0x70726f66ULL, akey, static_cast<std::uint64_t>(c)});
            std::bernoulli_distribution drop(cfg.missing_rate);
            std::vector<double> truth(static_cast<std::size_t>(grid));
            for (int i = 0; i < grid; ++i) {
                const double t = cfg.base_intensity * truth_shape(family, p.bank_position, axial_position(i, grid), cfg);
                truth[static_cast<std::size_t>(i)] = t;
                const double expected = t * decay;
                double count;
                if (cfg.noise == NoiseModel::poisson) {
                    std::poisson_distribution<long> pois(expected);
                    count = static_cast<double>(pois(rng));
                } else {
                    std::normal_distribution<double> g(0.0, 1.0);
                    count = cfg.gaussian_sigma > 0.0 ? std::max(0.0, expected + cfg.gaussian_sigma * g(rng)) : expected;
                }
                const bool missing = cfg.missing_rate > 0.0 && drop(rng);
                if (!missing) p.counts.push_back({i, count});
            }
            if (p.counts.size() < 2)
                throw ConfigError("missing_rate left fewer than 2 points in " + p.key().str());
            keys.push_back(p.key());
            labels.push_back(family);
            out.families[p.key()] = family;
            out.truth_counts[p.key()] = std::move(truth);
            out.dataset.profiles.push_back(std::move(p));
        }
        Clustering truth = Clustering::from_labels(labels, ClusterMethod::ground_truth, std::move(keys));
        out.truth_labels[spec.id] = std::move(truth);
    }
    IngestConfig ingest;
    ingest.axial_grid_size = grid;
    ingest.hold_out_last = cfg.hold_out_last;
    assign_split(out.dataset, ingest);
    out.dataset.validate();
    return out;
}

inline void write_truth_labels_csv(std::ostream& out, const SynthOutput& s) {
    out << "cycle_id,assembly_id,family\n";
    for (const auto& p : s.dataset.profiles) out << p.cycle_id << ',' << p.assembly_id << ',' << s.families.at(p.key()) << '\n';
}

inline void write_truth_profiles_csv(std::ostream& out, const SynthOutput& s) {
    out << "cycle_id,assembly_id,axial_index,truth\n";
    for (const auto& p : s.dataset.profiles) {
        const auto& t = s.truth_counts.at(p.key());
        for (std::size_t i = 0; i < t.size(); ++i)
            out << p.cycle_id << ',' << p.assembly_id << ',' << i << ',' << text::format_double(t[i]) << '\n';
    }
}

}  // namespace fluxlattice
