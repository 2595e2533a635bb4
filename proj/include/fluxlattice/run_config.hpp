#pragma once

// Plain-text run configuration for the end-to-end study.
//
// Grammar: one `key = value` per line; `#` starts a comment; blank lines are
// ignored; keys are dotted paths (see config_keys()). Unknown keys and
// malformed values are rejected with the offending line number.

#include <cstdint>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "cluster.hpp"
#include "data_model.hpp"
#include "error.hpp"
#include "gp.hpp"
#include "mcdnn.hpp"
#include "preprocess.hpp"
#include "rng.hpp"
#include "simindex.hpp"
#include "synthgen.hpp"

namespace fluxlattice {

enum class PreferenceMode { median, tune, fixed };

struct PathConfig {
    std::string data = "data";       // generated dataset, split and truth sidecars
    std::string models = "models";
    std::string reports = "report";  // plot-ready outputs of `report`
    std::string dataset;             // external dataset CSV; default <data>/dataset.csv
    std::string split;               // external cycle_id,role CSV; default <data>/split.csv if present
};

struct RunConfig {
    std::uint64_t seed = 42;
    int jobs = 1;
    int axial_grid_size = kAxialGridSize;
    PathConfig paths;
    std::size_t hold_out_last = 10;

    SynthConfig synth;
    PreprocessConfig preprocess;

    KMeansConfig kmeans;
    ApConfig ap;
    PreferenceMode ap_preference = PreferenceMode::tune;
    double ap_preference_value = 0.0;  // used when ap_preference == fixed
    int ap_tune_candidates = 40;
    MeanKind agreement_mean = MeanKind::arithmetic;
    ClusterMethod fanout = ClusterMethod::kmeans;  // labels that drive per-cluster training

    GpHyperparams gp{1.0, 0.3, 1e-8};
    int gp_stride = 4;  // keep every n-th axial index for GP training
    MlpConfig mlp = [] {
        MlpConfig m;
        m.epochs = 150;
        return m;
    }();
    int mlp_stride = 1;

    double bump_fraction = 0.2;  // top share of the axial grid scored separately

    void validate() const {
        if (jobs < 1) throw ConfigError("jobs must be >= 1");
        if (axial_grid_size < 2) throw ConfigError("axial_grid_size must be >= 2");
        SynthConfig s = synth;
        s.axial_grid_size = axial_grid_size;
        s.validate();
        preprocess.validate();
        kmeans.validate();
        ap.validate();
        if (ap_tune_candidates < 1) throw ConfigError("ap.tune_candidates must be >= 1");
        if (fanout == ClusterMethod::ground_truth) throw ConfigError("cluster.fanout must be kmeans or affinity_propagation");
        gp.validate();
        mlp.validate();
        if (gp_stride < 1 || mlp_stride < 1) throw ConfigError("strides must be >= 1");
        if (!(bump_fraction > 0.0 && bump_fraction <= 1.0)) throw ConfigError("evaluate.bump_fraction must lie in (0, 1]");
    }

    // Synthetic-generator settings with run-level fields folded in.
    SynthConfig synth_config() const {
        SynthConfig s = synth;
        s.axial_grid_size = axial_grid_size;
        s.hold_out_last = hold_out_last;
        s.seed = derive_seed(seed, {hash_string("synth")});
        return s;
    }
};

namespace detail {

struct ConfigKey {
    std::string_view name;
    std::function<void(RunConfig&, std::string_view)> set;
    std::function<std::string(const RunConfig&)> get;
};

inline double parse_real_value(std::string_view key, std::string_view v) {
    double out = 0.0;
    if (!text::parse_double(v, out)) throw ConfigError(std::string(key) + ": expected a number, got '" + std::string(v) + "'");
    return out;
}

template <class Int>
Int parse_int_value(std::string_view key, std::string_view v) {
    Int out{};
    if (!text::parse_int(v, out)) throw ConfigError(std::string(key) + ": expected an integer, got '" + std::string(v) + "'");
    return out;
}

inline bool parse_bool_value(std::string_view key, std::string_view v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError(std::string(key) + ": expected true or false");
}

template <class Field>
ConfigKey real_key(std::string_view name, Field field) {
    return {name, [name, field](RunConfig& c, std::string_view v) { field(c) = parse_real_value(name, v); },
            [field](const RunConfig& c) { return text::format_double(field(c)); }};
}

template <class Int, class Field>
ConfigKey int_key(std::string_view name, Field field) {
    return {name, [name, field](RunConfig& c, std::string_view v) { field(c) = parse_int_value<Int>(name, v); },
            [field](const RunConfig& c) { return std::to_string(field(c)); }};
}

template <class Field>
ConfigKey string_key(std::string_view name, Field field) {
    return {name, [field](RunConfig& c, std::string_view v) { field(c) = std::string(v); },
            [field](const RunConfig& c) { return std::string(field(c)); }};
}

inline std::string assemblies_to_string(const std::vector<AssemblySpec>& specs) {
    std::string out;
    for (std::size_t i = 0; i < specs.size(); ++i) {
        if (i) out += ", ";
        out += specs[i].id + ':';
        for (std::size_t f = 0; f < specs[i].fractions.size(); ++f) {
            if (f) out += '/';
            out += text::format_double(specs[i].fractions[f]);
        }
        if (specs[i].outliers) out += ':' + std::to_string(specs[i].outliers);
    }
    return out;
}

// "C5:0.62/0.38, E5:0.55/0.45:1" -> id, family fractions, optional outlier count
inline std::vector<AssemblySpec> parse_assemblies(std::string_view v) {
    std::vector<AssemblySpec> out;
    for (auto item : text::split(v, ',')) {
        item = text::trim(item);
        if (item.empty()) continue;
        const auto parts = text::split(item, ':');
        if (parts.size() < 2 || parts.size() > 3) throw ConfigError("synth.assemblies: expected id:f0/f1[:outliers]");
        AssemblySpec a;
        a.id = std::string(text::trim(parts[0]));
        a.fractions.clear();
        for (auto f : text::split(parts[1], '/')) a.fractions.push_back(parse_real_value("synth.assemblies", text::trim(f)));
        if (parts.size() == 3) a.outliers = parse_int_value<int>("synth.assemblies", text::trim(parts[2]));
        out.push_back(std::move(a));
    }
    if (out.empty()) throw ConfigError("synth.assemblies: at least one assembly required");
    return out;
}

inline std::string hidden_to_string(const std::vector<int>& h) {
    std::string out;
    for (std::size_t i = 0; i < h.size(); ++i) out += (i ? "," : "") + std::to_string(h[i]);
    return out;
}

}  // namespace detail

// Every accepted key, in canonical order.
inline const std::vector<detail::ConfigKey>& config_keys() {
    using namespace detail;
    static const std::vector<ConfigKey> keys = [] {
        std::vector<ConfigKey> k;
        k.push_back(int_key<std::uint64_t>("seed", [](auto& c) -> auto& { return c.seed; }));
        k.push_back(int_key<int>("jobs", [](auto& c) -> auto& { return c.jobs; }));
        k.push_back(int_key<int>("axial_grid_size", [](auto& c) -> auto& { return c.axial_grid_size; }));
        k.push_back(string_key("paths.data", [](auto& c) -> auto& { return c.paths.data; }));
        k.push_back(string_key("paths.models", [](auto& c) -> auto& { return c.paths.models; }));
        k.push_back(string_key("paths.reports", [](auto& c) -> auto& { return c.paths.reports; }));
        k.push_back(string_key("paths.dataset", [](auto& c) -> auto& { return c.paths.dataset; }));
        k.push_back(string_key("paths.split", [](auto& c) -> auto& { return c.paths.split; }));
        k.push_back(int_key<std::size_t>("split.hold_out_last", [](auto& c) -> auto& { return c.hold_out_last; }));

        k.push_back(int_key<int>("synth.n_cycles", [](auto& c) -> auto& { return c.synth.n_cycles; }));
        k.push_back({"synth.assemblies",
                     [](RunConfig& c, std::string_view v) { c.synth.assemblies = parse_assemblies(v); },
                     [](const RunConfig& c) { return assemblies_to_string(c.synth.assemblies); }});
        k.push_back(real_key("synth.base_intensity", [](auto& c) -> auto& { return c.synth.base_intensity; }));
        k.push_back(real_key("synth.bump_amplitude", [](auto& c) -> auto& { return c.synth.bump_amplitude; }));
        k.push_back(real_key("synth.bump_center", [](auto& c) -> auto& { return c.synth.bump_center; }));
        k.push_back(real_key("synth.bump_width", [](auto& c) -> auto& { return c.synth.bump_width; }));
        k.push_back(real_key("synth.bank_tilt", [](auto& c) -> auto& { return c.synth.bank_tilt; }));
        k.push_back(real_key("synth.outlier_shift", [](auto& c) -> auto& { return c.synth.outlier_shift; }));
        k.push_back(real_key("synth.chop_length", [](auto& c) -> auto& { return c.synth.chop_length; }));
        k.push_back(real_key("synth.missing_rate", [](auto& c) -> auto& { return c.synth.missing_rate; }));
        k.push_back(real_key("synth.bank_low", [](auto& c) -> auto& { return c.synth.bank_low; }));
        k.push_back(real_key("synth.bank_high", [](auto& c) -> auto& { return c.synth.bank_high; }));
        k.push_back({"synth.noise",
                     [](RunConfig& c, std::string_view v) {
                         if (v == "poisson") c.synth.noise = NoiseModel::poisson;
                         else if (v == "gaussian") c.synth.noise = NoiseModel::gaussian;
                         else throw ConfigError("synth.noise: expected poisson or gaussian");
                     },
                     [](const RunConfig& c) {
                         return std::string(c.synth.noise == NoiseModel::poisson ? "poisson" : "gaussian");
                     }});
        k.push_back(real_key("synth.gaussian_sigma", [](auto& c) -> auto& { return c.synth.gaussian_sigma; }));
        k.push_back(real_key("synth.half_life", [](auto& c) -> auto& { return c.synth.half_life; }));
        k.push_back(real_key("synth.scan_interval_minutes", [](auto& c) -> auto& { return c.synth.scan_interval_minutes; }));
        k.push_back(real_key("synth.cycle_spacing_days", [](auto& c) -> auto& { return c.synth.cycle_spacing_days; }));

        k.push_back(real_key("preprocess.half_life", [](auto& c) -> auto& { return c.preprocess.half_life; }));
        k.push_back(int_key<int>("preprocess.sg_window", [](auto& c) -> auto& { return c.preprocess.sg_window; }));
        k.push_back(int_key<int>("preprocess.sg_polyorder", [](auto& c) -> auto& { return c.preprocess.sg_polyorder; }));
        k.push_back({"preprocess.normalize",
                     [](RunConfig& c, std::string_view v) { c.preprocess.normalize = parse_bool_value("preprocess.normalize", v); },
                     [](const RunConfig& c) { return std::string(c.preprocess.normalize ? "true" : "false"); }});

        k.push_back(int_key<int>("kmeans.k", [](auto& c) -> auto& { return c.kmeans.k; }));
        k.push_back(int_key<int>("kmeans.restarts", [](auto& c) -> auto& { return c.kmeans.restarts; }));
        k.push_back(int_key<int>("kmeans.max_iter", [](auto& c) -> auto& { return c.kmeans.max_iter; }));
        k.push_back(real_key("kmeans.tol", [](auto& c) -> auto& { return c.kmeans.tol; }));

        k.push_back({"ap.preference",
                     [](RunConfig& c, std::string_view v) {
                         if (v == "median") c.ap_preference = PreferenceMode::median;
                         else if (v == "tune") c.ap_preference = PreferenceMode::tune;
                         else {
                             c.ap_preference = PreferenceMode::fixed;
                             c.ap_preference_value = parse_real_value("ap.preference", v);
                         }
                     },
                     [](const RunConfig& c) {
                         switch (c.ap_preference) {
                             case PreferenceMode::median: return std::string("median");
                             case PreferenceMode::tune: return std::string("tune");
                             default: return text::format_double(c.ap_preference_value);
                         }
                     }});
        k.push_back(real_key("ap.damping", [](auto& c) -> auto& { return c.ap.damping; }));
        k.push_back(int_key<int>("ap.max_iter", [](auto& c) -> auto& { return c.ap.max_iter; }));
        k.push_back(int_key<int>("ap.convergence_iter", [](auto& c) -> auto& { return c.ap.convergence_iter; }));
        k.push_back(int_key<int>("ap.tune_candidates", [](auto& c) -> auto& { return c.ap_tune_candidates; }));

        k.push_back({"cluster.agreement_mean",
                     [](RunConfig& c, std::string_view v) {
                         if (v == "arithmetic") c.agreement_mean = MeanKind::arithmetic;
                         else if (v == "geometric") c.agreement_mean = MeanKind::geometric;
                         else throw ConfigError("cluster.agreement_mean: expected arithmetic or geometric");
                     },
                     [](const RunConfig& c) {
                         return std::string(c.agreement_mean == MeanKind::arithmetic ? "arithmetic" : "geometric");
                     }});
        k.push_back({"cluster.fanout",
                     [](RunConfig& c, std::string_view v) {
                         try {
                             c.fanout = parse_cluster_method(v);
                         } catch (const ValidationError&) {
                             throw ConfigError("cluster.fanout: expected kmeans or affinity_propagation");
                         }
                     },
                     [](const RunConfig& c) { return std::string(to_string(c.fanout)); }});

        k.push_back(real_key("gp.sigma_f", [](auto& c) -> auto& { return c.gp.sigma_f; }));
        k.push_back(real_key("gp.length_scale", [](auto& c) -> auto& { return c.gp.length_scale; }));
        k.push_back(real_key("gp.jitter", [](auto& c) -> auto& { return c.gp.jitter; }));
        k.push_back(int_key<int>("gp.stride", [](auto& c) -> auto& { return c.gp_stride; }));

        k.push_back({"mlp.hidden_sizes",
                     [](RunConfig& c, std::string_view v) {
                         c.mlp.hidden_sizes.clear();
                         for (auto h : text::split(v, ','))
                             c.mlp.hidden_sizes.push_back(parse_int_value<int>("mlp.hidden_sizes", text::trim(h)));
                     },
                     [](const RunConfig& c) { return hidden_to_string(c.mlp.hidden_sizes); }});
        k.push_back(real_key("mlp.dropout_p", [](auto& c) -> auto& { return c.mlp.dropout_p; }));
        k.push_back(real_key("mlp.weight_decay", [](auto& c) -> auto& { return c.mlp.weight_decay; }));
        k.push_back(real_key("mlp.learning_rate", [](auto& c) -> auto& { return c.mlp.learning_rate; }));
        k.push_back(int_key<int>("mlp.epochs", [](auto& c) -> auto& { return c.mlp.epochs; }));
        k.push_back(int_key<int>("mlp.batch_size", [](auto& c) -> auto& { return c.mlp.batch_size; }));
        k.push_back(int_key<int>("mlp.mc_passes", [](auto& c) -> auto& { return c.mlp.mc_passes; }));
        k.push_back(int_key<int>("mlp.stride", [](auto& c) -> auto& { return c.mlp_stride; }));

        k.push_back(real_key("evaluate.bump_fraction", [](auto& c) -> auto& { return c.bump_fraction; }));
        return k;
    }();
    return keys;
}

inline void apply_config_line(RunConfig& cfg, std::string_view key, std::string_view value) {
    for (const auto& k : config_keys())
        if (k.name == key) {
            k.set(cfg, value);
            return;
        }
    throw ConfigError("unknown key '" + std::string(key) + "'");
}

// Parses config text on top of `base` and validates the result.
inline RunConfig parse_run_config(std::istream& in, RunConfig base = {}) {
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        const std::string_view body = text::trim(line);
        if (body.empty()) continue;
        const auto eq = body.find('=');
        if (eq == std::string_view::npos) throw ParseError(lineno, "expected key = value");
        const auto key = text::trim(body.substr(0, eq));
        const auto value = text::trim(body.substr(eq + 1));
        if (key.empty()) throw ParseError(lineno, "empty key");
        try {
            apply_config_line(base, key, value);
        } catch (const ParseError&) {
            throw;
        } catch (const ValidationError& e) {
            throw ParseError(lineno, e.what());
        }
    }
    base.validate();
    return base;
}

inline RunConfig parse_run_config(std::string_view content, RunConfig base = {}) {
    std::istringstream in{std::string(content)};
    return parse_run_config(in, std::move(base));
}

inline RunConfig load_run_config(const std::string& path, RunConfig base = {}) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    return parse_run_config(in, std::move(base));
}

// Canonical `key = value` listing of every setting; parses back to `cfg`.
// `jobs` only changes scheduling, never results, so it is left out of the
// listing that gets hashed into run manifests unless asked for.
inline std::string to_text(const RunConfig& cfg, bool include_jobs = false) {
    std::string out;
    for (const auto& k : config_keys()) {
        if (k.name == "jobs" && !include_jobs) continue;
        out += std::string(k.name) + " = " + k.get(cfg) + '\n';
    }
    return out;
}

}  // namespace fluxlattice
