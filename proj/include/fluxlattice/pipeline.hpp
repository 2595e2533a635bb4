#pragma once

// End-to-end study as a sequence of file-backed stages:
//
//   synth -> preprocess -> cluster -> train -> predict -> evaluate -> report
//
// Every stage reads its inputs from the run directory, fails with a
// StagedDependencyError naming the first missing input, writes its outputs,
// and refreshes `manifest.txt` (content hashes of every artifact except the
// wall-clock timings under `timing/`).

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cluster.hpp"
#include "data_model.hpp"
#include "error.hpp"
#include "evalmetrics.hpp"
#include "gp.hpp"
#include "mcdnn.hpp"
#include "model_io.hpp"
#include "parallel.hpp"
#include "preprocess.hpp"
#include "rng.hpp"
#include "run_config.hpp"
#include "simindex.hpp"
#include "synthgen.hpp"

namespace fluxlattice {

namespace fs = std::filesystem;
using json = nlohmann::json;

// ---------------------------------------------------------------------------
// run directory layout
// ---------------------------------------------------------------------------

struct Layout {
    fs::path out, data, models, reports;

    fs::path preprocess() const { return out / "preprocess"; }
    fs::path cluster() const { return out / "cluster"; }
    fs::path predict() const { return out / "predict"; }
    fs::path evaluate() const { return out / "evaluate"; }
    fs::path timing() const { return out / "timing"; }
    fs::path manifest() const { return out / "manifest.txt"; }
    fs::path dataset_csv;
    fs::path split_csv;  // empty: hold out the last cycles
};

inline Layout make_layout(const RunConfig& cfg, const fs::path& out) {
    auto under = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : out / p; };
    Layout l;
    l.out = out;
    l.data = under(cfg.paths.data);
    l.models = under(cfg.paths.models);
    l.reports = under(cfg.paths.reports);
    l.dataset_csv = cfg.paths.dataset.empty() ? l.data / "dataset.csv" : fs::path(cfg.paths.dataset);
    if (!cfg.paths.split.empty())
        l.split_csv = cfg.paths.split;
    else if (cfg.paths.dataset.empty() && fs::exists(l.data / "split.csv"))
        l.split_csv = l.data / "split.csv";
    return l;
}

// ---------------------------------------------------------------------------
// small file helpers
// ---------------------------------------------------------------------------

namespace detail {

inline void require(const fs::path& p) {
    if (!fs::exists(p)) throw StagedDependencyError(p.string());
}

inline void write_file(const fs::path& p, const std::string& content) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError("cannot write " + p.string());
    out << content;
    if (!out) throw ValidationError("write failed for " + p.string());
}

inline std::string read_file(const fs::path& p) {
    require(p);
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

inline std::string hex64(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

inline std::string fmt(double v) { return text::format_double(v); }

// Header-checked CSV table; values are kept as strings.
struct Csv {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::size_t col(std::string_view name) const {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return i;
        throw ParseError(1, "missing column '" + std::string(name) + "'");
    }
};

inline Csv read_csv(const fs::path& p) {
    const std::string content = read_file(p);
    std::istringstream in(content);
    Csv t;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> f;
        for (auto s : text::split(line, ',')) f.emplace_back(s);
        if (lineno == 1) {
            t.header = std::move(f);
            continue;
        }
        if (f.size() != t.header.size())
            throw ParseError(lineno, p.filename().string() + ": expected " + std::to_string(t.header.size()) + " fields");
        t.rows.push_back(std::move(f));
    }
    if (t.header.empty()) throw ParseError(1, p.filename().string() + ": missing header row");
    return t;
}

inline double real_field(const std::string& s) {
    if (s.empty() || s == "nan") return std::numeric_limits<double>::quiet_NaN();
    double v = 0.0;
    if (!text::parse_double(s, v)) throw ValidationError("not a number: '" + s + "'");
    return v;
}

inline int int_field(const std::string& s) {
    int v = 0;
    if (!text::parse_int(s, v)) throw ValidationError("not an integer: '" + s + "'");
    return v;
}

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline void check_id(const std::string& id) {
    if (id.empty() || id.find_first_of(",/\\:\n") != std::string::npos)
        throw ValidationError("identifier '" + id + "' is not usable in file names");
}

inline std::string part_name(int cluster) { return cluster < 0 ? "pooled" : "c" + std::to_string(cluster); }

inline std::uint64_t stream(std::uint64_t seed, std::initializer_list<std::string_view> path) {
    std::vector<std::uint64_t> h;
    for (auto p : path) h.push_back(hash_string(p));
    std::uint64_t s = splitmix64(seed);
    for (auto x : h) s = derive_seed(s, {x});
    return s;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// manifest
// ---------------------------------------------------------------------------

inline std::string file_hash(const fs::path& p) { return detail::hex64(hash_string(detail::read_file(p))); }

// Key/value manifest listing every artifact with its content hash.
// Wall-clock timings (timing/) are excluded so reruns hash identically.
inline void write_manifest(const RunConfig& cfg, const Layout& l) {
    std::set<fs::path> roots{l.out, l.data, l.models, l.reports};
    std::map<std::string, std::string> artifacts;
    const fs::path out_abs = fs::weakly_canonical(l.out);
    for (const auto& root : roots) {
        if (!fs::exists(root)) continue;
        for (const auto& e : fs::recursive_directory_iterator(root)) {
            if (!e.is_regular_file()) continue;
            const fs::path abs = fs::weakly_canonical(e.path());
            fs::path rel = abs.lexically_relative(out_abs);
            const bool inside = !rel.empty() && *rel.begin() != "..";
            if (inside && (rel == "manifest.txt" || *rel.begin() == "timing")) continue;
            artifacts[inside ? rel.generic_string() : abs.generic_string()] = file_hash(abs);
        }
    }
    std::string m = "# fluxlattice run manifest\n";
    m += "manifest_version = 1\n";
    m += "seed = " + std::to_string(cfg.seed) + "\n";
    m += "config_hash = " + detail::hex64(hash_string(to_text(cfg))) + "\n";
    m += "artifact_count = " + std::to_string(artifacts.size()) + "\n";
    for (const auto& [name, hash] : artifacts) m += "artifact " + name + " = " + hash + "\n";
    detail::write_file(l.manifest(), m);
}

inline std::map<std::string, std::string> read_manifest_artifacts(const fs::path& manifest) {
    std::map<std::string, std::string> out;
    std::istringstream in(detail::read_file(manifest));
    std::string line;
    while (std::getline(in, line)) {
        if (line.rfind("artifact ", 0) != 0) continue;
        const auto eq = line.rfind(" = ");
        out[line.substr(9, eq - 9)] = line.substr(eq + 3);
    }
    return out;
}

// ---------------------------------------------------------------------------
// shared helpers
// ---------------------------------------------------------------------------

inline CycleDataset load_run_dataset(const RunConfig& cfg, const Layout& l) {
    detail::require(l.dataset_csv);
    IngestConfig ic;
    ic.axial_grid_size = cfg.axial_grid_size;
    ic.hold_out_last = cfg.hold_out_last;
    if (!l.split_csv.empty()) {
        detail::require(l.split_csv);
        ic.split_path = l.split_csv.string();
    }
    CycleDataset ds = load_dataset(l.dataset_csv.string(), ic);
    for (const auto& a : ds.assemblies()) detail::check_id(a);
    return ds;
}

// Flattened (bank, axial index) -> z-scored count training set.
struct RegressionSet {
    Eigen::MatrixXd x;  // raw features: bank position, axial index
    Eigen::VectorXd y;
    Eigen::VectorXd noise_sd;
    std::size_t profiles = 0;
};

inline RegressionSet build_regression_set(const std::vector<const FluxProfile*>& corrected, int stride) {
    std::vector<double> xb, xa, ys, ns;
    for (const FluxProfile* p : corrected) {
        const RegressionProfile r = regression_profile(*p);
        for (std::size_t i = 0; i < r.target.size(); ++i) {
            if (r.axial_index[i] % stride != 0) continue;
            xb.push_back(r.bank_position);
            xa.push_back(r.axial_index[i]);
            ys.push_back(r.target[i]);
            ns.push_back(r.noise_sd[i]);
        }
    }
    RegressionSet s;
    const auto n = static_cast<Eigen::Index>(ys.size());
    s.x.resize(n, 2);
    s.y.resize(n);
    s.noise_sd.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto u = static_cast<std::size_t>(i);
        s.x(i, 0) = xb[u];
        s.x(i, 1) = xa[u];
        s.y(i) = ys[u];
        s.noise_sd(i) = ns[u];
    }
    s.profiles = corrected.size();
    return s;
}

// Mean point-wise noise (z units) per axial index over `corrected`; indices
// never observed take the overall mean. Used as the query noise for
// predictions that include measurement noise.
inline std::vector<double> axial_noise_profile(const std::vector<const FluxProfile*>& corrected, int grid) {
    std::vector<double> sum(static_cast<std::size_t>(grid), 0.0);
    std::vector<int> cnt(static_cast<std::size_t>(grid), 0);
    double total = 0.0;
    int total_n = 0;
    for (const FluxProfile* p : corrected) {
        const RegressionProfile r = regression_profile(*p);
        for (std::size_t i = 0; i < r.noise_sd.size(); ++i) {
            const auto a = static_cast<std::size_t>(r.axial_index[i]);
            sum[a] += r.noise_sd[i];
            ++cnt[a];
            total += r.noise_sd[i];
            ++total_n;
        }
    }
    const double fallback = total_n ? total / total_n : 0.0;
    std::vector<double> out(static_cast<std::size_t>(grid));
    for (std::size_t a = 0; a < out.size(); ++a) out[a] = cnt[a] ? sum[a] / cnt[a] : fallback;
    return out;
}

inline std::vector<double> axial_grid_indices(int grid) {
    std::vector<double> g(static_cast<std::size_t>(grid));
    for (int i = 0; i < grid; ++i) g[static_cast<std::size_t>(i)] = i;
    return g;
}

inline std::size_t bump_begin(int grid, double fraction) {
    const auto width = static_cast<std::size_t>(std::lround(fraction * grid));
    return static_cast<std::size_t>(grid) - std::min(width, static_cast<std::size_t>(grid));
}

struct ShapeTable {
    struct Row {
        ProfileKey key;
        Split split = Split::train;
        std::vector<double> shape;
    };
    std::map<std::string, std::vector<Row>> by_assembly;  // historical order within an assembly
};

inline ShapeTable read_shapes(const Layout& l) {
    const detail::Csv t = detail::read_csv(l.preprocess() / "shapes.csv");
    const std::size_t c_cycle = t.col("cycle_id"), c_asm = t.col("assembly_id"), c_split = t.col("split");
    const std::size_t first = c_split + 1;
    ShapeTable s;
    for (const auto& r : t.rows) {
        ShapeTable::Row row;
        row.key = {r[c_cycle], r[c_asm]};
        row.split = parse_split(r[c_split]);
        for (std::size_t i = first; i < r.size(); ++i) row.shape.push_back(detail::real_field(r[i]));
        s.by_assembly[row.key.assembly_id].push_back(std::move(row));
    }
    return s;
}

// Fan-out (or any) clustering per assembly from cluster/labels.csv and
// cluster/representatives.csv.
inline std::map<std::string, Clustering> read_clusterings(const Layout& l, ClusterMethod method) {
    const detail::Csv lab = detail::read_csv(l.cluster() / "labels.csv");
    const detail::Csv rep = detail::read_csv(l.cluster() / "representatives.csv");
    const std::string m(to_string(method));
    std::map<std::string, std::pair<std::vector<ProfileKey>, std::vector<int>>> raw;
    const std::size_t la = lab.col("assembly_id"), lc = lab.col("cycle_id"), lm = lab.col("method"), ll = lab.col("cluster");
    for (const auto& r : lab.rows) {
        if (r[lm] != m) continue;
        auto& [keys, labels] = raw[r[la]];
        keys.push_back({r[lc], r[la]});
        labels.push_back(detail::int_field(r[ll]));
    }
    std::map<std::string, Clustering> out;
    for (auto& [a, kl] : raw) {
        Clustering c = Clustering::from_labels(kl.second, method);
        c.keys = std::move(kl.first);
        c.representatives.assign(static_cast<std::size_t>(c.k), {});
        out.emplace(a, std::move(c));
    }
    const std::size_t ra = rep.col("assembly_id"), rm = rep.col("method"), rc = rep.col("cluster");
    for (const auto& r : rep.rows) {
        if (r[rm] != m) continue;
        auto it = out.find(r[ra]);
        if (it == out.end()) throw ValidationError("representative for unknown assembly " + r[ra]);
        const int c = detail::int_field(r[rc]);
        if (c < 0 || c >= it->second.k) throw ValidationError("representative for unknown cluster");
        auto& v = it->second.representatives[static_cast<std::size_t>(c)];
        for (std::size_t i = rc + 1; i < r.size(); ++i) v.push_back(detail::real_field(r[i]));
    }
    for (auto& [a, c] : out)
        for (const auto& v : c.representatives)
            if (v.empty()) throw ValidationError("cluster of " + a + " lacks a representative");
    return out;
}

// ---------------------------------------------------------------------------
// stages
// ---------------------------------------------------------------------------

inline std::string cmd_synth(const RunConfig& cfg, const fs::path& out) {
    cfg.validate();
    const Layout l = make_layout(cfg, out);
    const SynthConfig sc = cfg.synth_config();
    for (const auto& a : sc.assemblies) detail::check_id(a.id);
    const SynthOutput s = generate(sc);
    fs::create_directories(l.data);
    save_dataset(s.dataset, (l.data / "dataset.csv").string());
    save_split(s.dataset, (l.data / "split.csv").string());
    std::ostringstream labels, truth;
    write_truth_labels_csv(labels, s);
    write_truth_profiles_csv(truth, s);
    detail::write_file(l.data / "truth_labels.csv", labels.str());
    detail::write_file(l.data / "truth_profiles.csv", truth.str());
    detail::write_file(l.out / "config.txt", to_text(cfg));
    write_manifest(cfg, l);
    return "synth: " + std::to_string(s.dataset.profiles.size()) + " profiles, " +
           std::to_string(sc.assemblies.size()) + " assemblies -> " + l.data.string();
}

inline std::string cmd_preprocess(const RunConfig& cfg, const fs::path& out) {
    cfg.validate();
    const Layout l = make_layout(cfg, out);
    const CycleDataset ds = load_run_dataset(cfg, l);
    const CycleDataset corrected = decay_correct_cycles(ds, cfg.preprocess.half_life);
    const auto assemblies = ds.assemblies();

    std::vector<std::string> shape_blocks(assemblies.size()), floor_blocks(assemblies.size());
    parallel_for(assemblies.size(), cfg.jobs, [&](std::size_t ai) {
        const auto profiles = ds.select(assemblies[ai]);
        const ShapeMatrix shapes = preprocess_for_clustering(ds, profiles, cfg.preprocess);
        std::string sb, fb;
        for (std::size_t r = 0; r < profiles.size(); ++r) {
            const FluxProfile& p = *profiles[r];
            const std::string split(to_string(ds.split.at(p.cycle_id)));
            sb += p.cycle_id + ',' + p.assembly_id + ',' + split;
            for (Eigen::Index c = 0; c < shapes.rows.cols(); ++c)
                sb += ',' + detail::fmt(shapes.rows(static_cast<Eigen::Index>(r), c));
            sb += '\n';

            const FluxProfile* cp = corrected.find(p.key());
            const std::vector<double> raw = cp->values();
            const std::vector<double> z = cfg.preprocess.normalize ? zscore(raw) : raw;
            const std::vector<double> smooth = savgol_smooth(z, cfg.preprocess.sg_window, cfg.preprocess.sg_polyorder);
            fb += p.cycle_id + ',' + p.assembly_id + ',' + split + ',' + detail::fmt(noise_floor_nrmse(z, smooth)) + '\n';
        }
        shape_blocks[ai] = std::move(sb);
        floor_blocks[ai] = std::move(fb);
    });

    std::string shapes = "cycle_id,assembly_id,split";
    for (int c = 0; c < cfg.axial_grid_size; ++c) shapes += ",v" + std::to_string(c);
    shapes += '\n';
    std::string floors = "cycle_id,assembly_id,split,noise_floor_nrmse\n";
    for (std::size_t i = 0; i < assemblies.size(); ++i) {
        shapes += shape_blocks[i];
        floors += floor_blocks[i];
    }
    detail::write_file(l.preprocess() / "shapes.csv", shapes);
    detail::write_file(l.preprocess() / "noise_floor.csv", floors);
    detail::write_file(l.out / "config.txt", to_text(cfg));
    write_manifest(cfg, l);
    return "preprocess: " + std::to_string(ds.profiles.size()) + " profiles -> " + l.preprocess().string();
}

namespace detail {

inline json scores_json(const AgreementScores& s) { return {{"ari", s.ari}, {"ami", s.ami}, {"nmi", s.nmi}}; }

inline std::map<ProfileKey, int> read_truth_labels(const fs::path& p) {
    std::map<ProfileKey, int> out;
    if (!fs::exists(p)) return out;
    const Csv t = read_csv(p);
    const std::size_t c = t.col("cycle_id"), a = t.col("assembly_id"), f = t.col("family");
    for (const auto& r : t.rows) out[{r[c], r[a]}] = int_field(r[f]);
    return out;
}

}  // namespace detail

inline std::string cmd_cluster(const RunConfig& cfg, const fs::path& out) {
    cfg.validate();
    const Layout l = make_layout(cfg, out);
    const ShapeTable shapes = read_shapes(l);
    const auto truth = detail::read_truth_labels(l.data / "truth_labels.csv");

    std::vector<std::string> assemblies;
    for (const auto& [a, rows] : shapes.by_assembly) assemblies.push_back(a);
    std::vector<ProtocolResult> results(assemblies.size());
    std::vector<std::string> preference_mode(assemblies.size());

    parallel_for(assemblies.size(), cfg.jobs, [&](std::size_t ai) {
        const auto& rows = shapes.by_assembly.at(assemblies[ai]);
        std::vector<ProfileKey> keys;
        std::vector<const std::vector<double>*> train;
        for (const auto& r : rows)
            if (r.split == Split::train) {
                keys.push_back(r.key);
                train.push_back(&r.shape);
            }
        if (train.empty()) throw InsufficientDataError("assembly " + assemblies[ai] + " has no training profiles");
        Matrix m(static_cast<Eigen::Index>(train.size()), static_cast<Eigen::Index>(train.front()->size()));
        for (std::size_t i = 0; i < train.size(); ++i)
            for (std::size_t j = 0; j < train[i]->size(); ++j)
                m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = (*train[i])[j];

        KMeansConfig kc = cfg.kmeans;
        kc.seed = detail::stream(cfg.seed, {"kmeans", assemblies[ai]});
        kc.jobs = 1;
        ApConfig ac = cfg.ap;
        switch (cfg.ap_preference) {
            case PreferenceMode::median: ac.preference.reset(); break;
            case PreferenceMode::fixed: ac.preference = cfg.ap_preference_value; break;
            case PreferenceMode::tune:
                ac.preference = m.rows() > 1
                    ? tune_ap_preference(similarity_matrix(m), cfg.kmeans.k, cfg.ap, cfg.ap_tune_candidates)
                    : 0.0;
                break;
        }
        preference_mode[ai] = cfg.ap_preference == PreferenceMode::median ? "median"
                            : cfg.ap_preference == PreferenceMode::tune   ? "tune"
                                                                          : "fixed";
        results[ai] = cluster_protocol(m, keys, kc, ac, cfg.agreement_mean);
    });

    std::string labels = "assembly_id,cycle_id,method,cluster\n";
    std::string reps = "assembly_id,method,cluster";
    for (int c = 0; c < cfg.axial_grid_size; ++c) reps += ",v" + std::to_string(c);
    reps += '\n';
    json summary = json::object();
    std::map<std::string, Clustering> km_all, ap_all;
    for (std::size_t ai = 0; ai < assemblies.size(); ++ai) {
        const auto& a = assemblies[ai];
        const ProtocolResult& r = results[ai];
        for (const Clustering* c : {&r.kmeans.clustering, &r.ap.clustering}) {
            const std::string method(to_string(c->method));
            for (std::size_t i = 0; i < c->keys.size(); ++i)
                labels += a + ',' + c->keys[i].cycle_id + ',' + method + ',' + std::to_string(c->labels[i]) + '\n';
            for (std::size_t k = 0; k < c->representatives.size(); ++k) {
                reps += a + ',' + method + ',' + std::to_string(k);
                for (double v : c->representatives[k]) reps += ',' + detail::fmt(v);
                reps += '\n';
            }
        }
        json j;
        j["profiles"] = r.kmeans.clustering.keys.size();
        j["kmeans"] = {{"k", r.kmeans.clustering.k},
                       {"sizes", r.kmeans_sizes},
                       {"inertia", r.kmeans.inertia},
                       {"iterations", r.kmeans.iterations},
                       {"best_restart", r.kmeans.best_restart}};
        j["affinity_propagation"] = {{"k", r.ap.clustering.k},
                                     {"sizes", r.ap_sizes},
                                     {"preference", r.ap.preference},
                                     {"preference_mode", preference_mode[ai]},
                                     {"converged", r.ap.converged},
                                     {"iterations", r.ap.iterations}};
        j["kmeans_vs_ap"] = detail::scores_json(r.agreement);
        if (!truth.empty()) {
            std::vector<int> t;
            for (const auto& k : r.kmeans.clustering.keys) {
                const auto it = truth.find(k);
                if (it == truth.end()) break;
                t.push_back(it->second);
            }
            if (t.size() == r.kmeans.clustering.keys.size() && t.size() >= 2) {
                auto safe = [&](const std::vector<int>& lab) -> json {
                    try {
                        return detail::scores_json(agreement(t, lab, cfg.agreement_mean));
                    } catch (const UndefinedIndexError&) {
                        return nullptr;
                    }
                };
                j["truth_vs_kmeans"] = safe(r.kmeans.clustering.labels);
                j["truth_vs_ap"] = safe(r.ap.clustering.labels);
            }
        }
        summary[a] = j;
        km_all.emplace(a, r.kmeans.clustering);
        ap_all.emplace(a, r.ap.clustering);
    }
    detail::write_file(l.cluster() / "labels.csv", labels);
    detail::write_file(l.cluster() / "representatives.csv", reps);
    detail::write_file(l.cluster() / "summary.json", summary.dump(2) + "\n");
    for (const auto& [name, all] : {std::pair{"kmeans", &km_all}, std::pair{"affinity_propagation", &ap_all}}) {
        std::ostringstream s;
        try {
            write_agreement_csv(s, cross_assembly_agreement(*all, cfg.agreement_mean));
        } catch (const ValidationError&) {
            s.str("");
            s << "measure,assembly_a,assembly_b,value\n";  // fewer than two comparable assemblies
        }
        detail::write_file(l.cluster() / (std::string("agreement_") + name + ".csv"), s.str());
    }
    detail::write_file(l.out / "config.txt", to_text(cfg));
    write_manifest(cfg, l);
    std::string msg = "cluster:";
    for (std::size_t ai = 0; ai < assemblies.size(); ++ai)
        msg += " " + assemblies[ai] + " kmeans " + results[ai].kmeans_sizes + " / AP " + results[ai].ap_sizes + ";";
    return msg;
}

inline std::string cmd_train(const RunConfig& cfg, const fs::path& out) {
    cfg.validate();
    const Layout l = make_layout(cfg, out);
    detail::require(l.cluster() / "labels.csv");
    detail::require(l.cluster() / "representatives.csv");
    const CycleDataset ds = load_run_dataset(cfg, l);
    const CycleDataset corrected = decay_correct_cycles(ds, cfg.preprocess.half_life);
    const auto clusterings = read_clusterings(l, cfg.fanout);

    struct Task {
        std::string assembly;
        int cluster;  // -1: pooled
        bool gp;
        std::vector<const FluxProfile*> profiles;
    };
    std::vector<Task> tasks;
    for (const auto& a : ds.assemblies()) {
        const auto train = corrected.select(a, Split::train);
        if (train.empty()) throw InsufficientDataError("assembly " + a + " has no training profiles");
        const auto it = clusterings.find(a);
        if (it == clusterings.end()) throw ValidationError("no clustering for assembly " + a + "; rerun cluster");
        std::map<std::string, int> label;
        for (std::size_t i = 0; i < it->second.keys.size(); ++i) label[it->second.keys[i].cycle_id] = it->second.labels[i];
        std::vector<std::vector<const FluxProfile*>> parts(static_cast<std::size_t>(it->second.k));
        for (const FluxProfile* p : train) {
            const auto li = label.find(p->cycle_id);
            if (li == label.end())
                throw ValidationError("training profile " + p->key().str() + " has no cluster label; rerun cluster");
            parts[static_cast<std::size_t>(li->second)].push_back(p);
        }
        for (bool gp : {true, false}) {
            tasks.push_back({a, -1, gp, train});
            for (std::size_t c = 0; c < parts.size(); ++c) tasks.push_back({a, static_cast<int>(c), gp, parts[c]});
        }
    }

    struct Done {
        std::string noise, history, index;
        double seconds = 0.0;
    };
    std::vector<Done> done(tasks.size());
    fs::create_directories(l.models);
    parallel_for(tasks.size(), cfg.jobs, [&](std::size_t ti) {
        const Task& t = tasks[ti];
        const std::string part = detail::part_name(t.cluster);
        const std::string file = t.assembly + "_" + part + (t.gp ? ".gp" : ".mlp");
        const std::string tag = std::string(t.gp ? "gp" : "mlp") + ":" + t.assembly + ":" + part;
        const auto t0 = std::chrono::steady_clock::now();
        const RegressionSet rs = build_regression_set(t.profiles, t.gp ? cfg.gp_stride : cfg.mlp_stride);
        const FeatureScaler scaler = FeatureScaler::fit(rs.x);
        Done d;
        if (t.gp) {
            GpModel m = gp_fit(scaler.transform(rs.x), rs.y, rs.noise_sd, cfg.gp, scaler);
            m.model_tag = tag;
            d.seconds = detail::seconds_since(t0);
            save_model(m, (l.models / file).string());
            const auto noise = axial_noise_profile(t.profiles, cfg.axial_grid_size);
            for (std::size_t i = 0; i < noise.size(); ++i)
                d.noise += t.assembly + ',' + part + ',' + std::to_string(i) + ',' + detail::fmt(noise[i]) + '\n';
        } else {
            MlpConfig mc = cfg.mlp;
            mc.seed = detail::stream(cfg.seed, {"mlp", t.assembly, part});
            TrainedMlp tm = train(scaler.transform(rs.x), rs.y, mc, scaler);
            tm.model.model_tag = tag;
            d.seconds = detail::seconds_since(t0);
            save_model(tm.model, (l.models / file).string());
            for (std::size_t e = 0; e < tm.history.train_loss.size(); ++e)
                d.history += t.assembly + ',' + part + ',' + std::to_string(e + 1) + ',' +
                             detail::fmt(tm.history.train_loss[e]) + ',' + detail::fmt(tm.history.validation_loss[e]) +
                             ',' + detail::fmt(tm.history.test_mse) + '\n';
        }
        d.index = t.assembly + ',' + part + ',' + std::to_string(t.cluster) + ',' + (t.gp ? "gp" : "mlp") + ',' + file +
                  ',' + std::to_string(t.profiles.size()) + ',' + std::to_string(rs.y.size()) + '\n';
        done[ti] = std::move(d);
    });

    std::string index = "assembly_id,part,cluster,model,file,profiles,points\n";
    std::string noise = "assembly_id,part,axial_index,noise_sd\n";
    std::string history = "assembly_id,part,epoch,train_loss,validation_loss,test_mse\n";
    std::string timing = "assembly_id,part,model,seconds\n";
    for (std::size_t ti = 0; ti < tasks.size(); ++ti) {
        index += done[ti].index;
        noise += done[ti].noise;
        history += done[ti].history;
        timing += tasks[ti].assembly + ',' + detail::part_name(tasks[ti].cluster) + ',' + (tasks[ti].gp ? "gp" : "mlp") +
                  ',' + detail::fmt(done[ti].seconds) + '\n';
    }
    detail::write_file(l.models / "index.csv", index);
    detail::write_file(l.models / "noise.csv", noise);
    detail::write_file(l.models / "history.csv", history);
    detail::write_file(l.timing() / "train.csv", timing);
    detail::write_file(l.out / "config.txt", to_text(cfg));
    write_manifest(cfg, l);
    return "train: " + std::to_string(tasks.size()) + " models -> " + l.models.string();
}

inline std::string cmd_predict(const RunConfig& cfg, const fs::path& out) {
    cfg.validate();
    const Layout l = make_layout(cfg, out);
    detail::require(l.preprocess() / "shapes.csv");
    detail::require(l.cluster() / "representatives.csv");
    detail::require(l.models / "index.csv");
    detail::require(l.models / "noise.csv");
    const CycleDataset ds = load_run_dataset(cfg, l);
    const ShapeTable shapes = read_shapes(l);
    const auto clusterings = read_clusterings(l, cfg.fanout);

    // model files and query noise per (assembly, part)
    std::map<std::pair<std::string, std::string>, std::pair<fs::path, fs::path>> files;  // gp, mlp
    {
        const detail::Csv t = detail::read_csv(l.models / "index.csv");
        const std::size_t a = t.col("assembly_id"), p = t.col("part"), m = t.col("model"), f = t.col("file");
        for (const auto& r : t.rows) {
            auto& slot = files[{r[a], r[p]}];
            (r[m] == "gp" ? slot.first : slot.second) = l.models / r[f];
        }
    }
    std::map<std::pair<std::string, std::string>, std::vector<double>> noise;
    {
        const detail::Csv t = detail::read_csv(l.models / "noise.csv");
        const std::size_t a = t.col("assembly_id"), p = t.col("part"), v = t.col("noise_sd");
        for (const auto& r : t.rows) noise[{r[a], r[p]}].push_back(detail::real_field(r[v]));
    }

    struct Query {
        const FluxProfile* profile;
        const std::vector<double>* shape;
    };
    std::vector<Query> queries;
    for (const auto& a : ds.assemblies()) {
        const auto it = shapes.by_assembly.find(a);
        if (it == shapes.by_assembly.end()) throw ValidationError("no preprocessed shapes for assembly " + a);
        std::map<std::string, const std::vector<double>*> by_cycle;
        for (const auto& r : it->second) by_cycle[r.key.cycle_id] = &r.shape;
        for (const FluxProfile* p : ds.select(a, Split::predict)) {
            const auto s = by_cycle.find(p->cycle_id);
            if (s == by_cycle.end()) throw ValidationError("no preprocessed shape for " + p->key().str() + "; rerun preprocess");
            queries.push_back({p, s->second});
        }
    }
    if (queries.empty()) throw InsufficientDataError("no held-out profiles to predict");

    // load every model once
    std::map<std::pair<std::string, std::string>, std::pair<GpModel, MlpModel>> models;
    for (const auto& [key, f] : files) {
        if (f.first.empty() || f.second.empty()) throw ValidationError("model index lists an incomplete pair for " + key.first);
        detail::require(f.first);
        detail::require(f.second);
        models[key] = {load_model_as<GpModel>(f.first.string()), load_model_as<MlpModel>(f.second.string())};
    }

    struct Result {
        std::string routing, rows, timing;
    };
    std::vector<Result> results(queries.size());
    const std::vector<double> grid = axial_grid_indices(cfg.axial_grid_size);
    parallel_for(queries.size(), cfg.jobs, [&](std::size_t qi) {
        const FluxProfile& p = *queries[qi].profile;
        const auto cit = clusterings.find(p.assembly_id);
        if (cit == clusterings.end()) throw RoutingError("no clustering for assembly " + p.assembly_id);
        const Clustering& c = cit->second;
        const int route = nearest_representative(c, *queries[qi].shape);
        Result res;
        for (std::size_t k = 0; k < c.representatives.size(); ++k) {
            double d = 0.0;
            for (std::size_t i = 0; i < c.representatives[k].size(); ++i) {
                const double e = c.representatives[k][i] - (*queries[qi].shape)[i];
                d += e * e;
            }
            res.routing += p.assembly_id + ',' + p.cycle_id + ',' + std::to_string(k) + ',' + detail::fmt(std::sqrt(d)) +
                           ',' + (static_cast<int>(k) == route ? "1" : "0") + '\n';
        }
        for (int variant = 0; variant < 2; ++variant) {
            const std::string part = detail::part_name(variant == 0 ? -1 : route);
            const std::string vname = variant == 0 ? "pooled" : "clustered";
            const auto key = std::pair{p.assembly_id, part};
            const auto mit = models.find(key);
            if (mit == models.end()) throw RoutingError("no trained model for " + p.assembly_id + " " + part);
            const auto& q_noise = noise.at(key);
            if (q_noise.size() != grid.size()) throw ValidationError("query noise length differs from the axial grid");

            auto t0 = std::chrono::steady_clock::now();
            const auto gp = gp_predict_profile(mit->second.first, p.bank_position, grid, true, q_noise);
            const double gp_s = detail::seconds_since(t0);
            t0 = std::chrono::steady_clock::now();
            const auto mlp = mc_predict_profile(mit->second.second, p.bank_position, grid, cfg.mlp.mc_passes,
                                                detail::stream(cfg.seed, {"mc", p.assembly_id, p.cycle_id, vname}));
            const double mlp_s = detail::seconds_since(t0);
            for (const auto& [name, preds] : {std::pair{"gp", &gp}, std::pair{"mlp", &mlp}})
                for (std::size_t i = 0; i < preds->size(); ++i) {
                    const UqPrediction& u = (*preds)[i];
                    res.rows += p.assembly_id + ',' + p.cycle_id + ',' + name + ',' + vname + ',' + part + ',' +
                                std::to_string(i) + ',' + detail::fmt(u.mean) + ',' + detail::fmt(u.std) + ',' +
                                detail::fmt(u.ci95_low) + ',' + detail::fmt(u.ci95_high) + '\n';
                }
            res.timing += p.assembly_id + ',' + p.cycle_id + ",gp," + vname + ',' + detail::fmt(gp_s) + '\n';
            res.timing += p.assembly_id + ',' + p.cycle_id + ",mlp," + vname + ',' + detail::fmt(mlp_s) + '\n';
        }
        results[qi] = std::move(res);
    });

    std::string routing = "assembly_id,cycle_id,cluster,distance,assigned\n";
    std::string rows = "assembly_id,cycle_id,model,variant,part,axial_index,mean,std,ci95_low,ci95_high\n";
    std::string timing = "assembly_id,cycle_id,model,variant,seconds\n";
    for (const auto& r : results) {
        routing += r.routing;
        rows += r.rows;
        timing += r.timing;
    }
    detail::write_file(l.predict() / "routing.csv", routing);
    detail::write_file(l.predict() / "predictions.csv", rows);
    detail::write_file(l.timing() / "predict.csv", timing);
    detail::write_file(l.out / "config.txt", to_text(cfg));
    write_manifest(cfg, l);
    return "predict: " + std::to_string(queries.size()) + " held-out profiles -> " + l.predict().string();
}

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------

struct PredictionTable {
    // (assembly, cycle, model, variant) -> per-axial predictions
    std::map<std::tuple<std::string, std::string, std::string, std::string>, std::vector<UqPrediction>> profiles;
};

inline PredictionTable read_predictions(const fs::path& p, int grid) {
    const detail::Csv t = detail::read_csv(p);
    const std::size_t a = t.col("assembly_id"), c = t.col("cycle_id"), m = t.col("model"), v = t.col("variant"),
                      x = t.col("axial_index"), mu = t.col("mean"), sd = t.col("std"), lo = t.col("ci95_low"),
                      hi = t.col("ci95_high");
    PredictionTable out;
    for (const auto& r : t.rows) {
        auto& prof = out.profiles[{r[a], r[c], r[m], r[v]}];
        if (prof.empty()) prof.resize(static_cast<std::size_t>(grid));
        const int i = detail::int_field(r[x]);
        if (i < 0 || i >= grid) throw ValidationError("prediction axial index out of range");
        UqPrediction& u = prof[static_cast<std::size_t>(i)];
        u.axial_location = i;
        u.mean = detail::real_field(r[mu]);
        u.std = detail::real_field(r[sd]);
        u.ci95_low = detail::real_field(r[lo]);
        u.ci95_high = detail::real_field(r[hi]);
        u.model_tag = r[m] + ":" + r[v];
    }
    return out;
}

// Held-out measurement and (optionally) noise-free truth, both in the z units
// of the measured profile.
struct HeldOut {
    std::vector<double> measured;  // NaN at gaps
    std::vector<double> truth;     // empty when no truth sidecar exists
};

inline std::map<ProfileKey, HeldOut> held_out_targets(const RunConfig& cfg, const Layout& l, const CycleDataset& ds) {
    const CycleDataset corrected = decay_correct_cycles(ds, cfg.preprocess.half_life);
    std::map<ProfileKey, std::vector<double>> truth_counts;
    if (const fs::path tp = l.data / "truth_profiles.csv"; cfg.paths.dataset.empty() && fs::exists(tp)) {
        const detail::Csv t = detail::read_csv(tp);
        const std::size_t c = t.col("cycle_id"), a = t.col("assembly_id"), x = t.col("axial_index"), v = t.col("truth");
        for (const auto& r : t.rows) {
            auto& vec = truth_counts[{r[c], r[a]}];
            if (vec.empty()) vec.assign(static_cast<std::size_t>(cfg.axial_grid_size), std::numeric_limits<double>::quiet_NaN());
            const int i = detail::int_field(r[x]);
            if (i >= 0 && i < cfg.axial_grid_size) vec[static_cast<std::size_t>(i)] = detail::real_field(r[v]);
        }
    }
    std::map<ProfileKey, HeldOut> out;
    for (const auto& p : corrected.profiles) {
        if (corrected.split.at(p.cycle_id) != Split::predict) continue;
        const RegressionProfile r = regression_profile(p);
        HeldOut h;
        h.measured.assign(static_cast<std::size_t>(cfg.axial_grid_size), std::numeric_limits<double>::quiet_NaN());
        for (std::size_t i = 0; i < r.target.size(); ++i) h.measured[static_cast<std::size_t>(r.axial_index[i])] = r.target[i];
        if (const auto it = truth_counts.find(p.key()); it != truth_counts.end())
            for (double t : it->second) h.truth.push_back((t - r.stats.mean) / r.stats.std);
        out.emplace(p.key(), std::move(h));
    }
    return out;
}

inline double coverage_present(std::span<const UqPrediction> preds, std::span<const double> reference) {
    std::vector<UqPrediction> p;
    std::vector<double> r;
    for (std::size_t i = 0; i < reference.size(); ++i)
        if (!std::isnan(reference[i])) {
            p.push_back(preds[i]);
            r.push_back(reference[i]);
        }
    return r.empty() ? std::numeric_limits<double>::quiet_NaN() : ci_coverage(p, r);
}

inline json box_json(const BoxStats& b, std::size_t n) {
    return {{"n", n},           {"median", b.median},           {"q1", b.q1},   {"q3", b.q3},
            {"whisker_low", b.whisker_low}, {"whisker_high", b.whisker_high}, {"mean", b.mean},
            {"outliers", b.outliers}};
}

inline std::string cmd_evaluate(const RunConfig& cfg, const fs::path& out) {
    cfg.validate();
    const Layout l = make_layout(cfg, out);
    detail::require(l.predict() / "predictions.csv");
    const CycleDataset ds = load_run_dataset(cfg, l);
    const PredictionTable preds = read_predictions(l.predict() / "predictions.csv", cfg.axial_grid_size);
    const auto targets = held_out_targets(cfg, l, ds);
    const std::size_t b0 = bump_begin(cfg.axial_grid_size, cfg.bump_fraction);
    const auto grid = static_cast<std::size_t>(cfg.axial_grid_size);

    struct Score {
        double nrmse, bump, cov_truth, cov_measured;
    };
    // (model, variant) -> assembly -> cycle -> score
    std::map<std::pair<std::string, std::string>, std::map<ProfileKey, Score>> scores;
    std::string table = "assembly_id,cycle_id,model,variant,nrmse,bump_nrmse,coverage_truth,coverage_measured\n";
    for (const auto& [key, prof] : preds.profiles) {
        const auto& [a, c, m, v] = key;
        const auto it = targets.find({c, a});
        if (it == targets.end()) throw ValidationError("prediction for " + a + "/" + c + " has no held-out measurement");
        const HeldOut& h = it->second;
        Score s{};
        std::vector<double> mu(prof.size());
        for (std::size_t i = 0; i < prof.size(); ++i) mu[i] = prof[i].mean;
        s.nrmse = nrmse(mu, h.measured);
        s.bump = nrmse_region(mu, h.measured, b0, grid);
        s.cov_truth = h.truth.empty() ? std::numeric_limits<double>::quiet_NaN() : coverage_present(prof, h.truth);
        s.cov_measured = coverage_present(prof, h.measured);
        scores[{m, v}][{c, a}] = s;
        table += a + ',' + c + ',' + m + ',' + v + ',' + detail::fmt(s.nrmse) + ',' + detail::fmt(s.bump) + ',' +
                 (h.truth.empty() ? std::string() : detail::fmt(s.cov_truth)) + ',' + detail::fmt(s.cov_measured) + '\n';
    }

    // noise floor from preprocess (optional)
    std::vector<double> floors;
    if (fs::exists(l.preprocess() / "noise_floor.csv")) {
        const detail::Csv t = detail::read_csv(l.preprocess() / "noise_floor.csv");
        const std::size_t v = t.col("noise_floor_nrmse");
        for (const auto& r : t.rows) floors.push_back(detail::real_field(r[v]));
    }

    std::string box = "scope,model,variant,metric,n,median,q1,q3,whisker_low,whisker_high,mean,outliers\n";
    auto add_box = [&](const std::string& scope, const std::string& m, const std::string& v, const std::string& metric,
                       const std::vector<double>& values) {
        if (values.empty()) return json(nullptr);
        const BoxStats b = box_stats(values);
        std::string outl;
        for (std::size_t i = 0; i < b.outliers.size(); ++i) outl += (i ? ";" : "") + detail::fmt(b.outliers[i]);
        box += scope + ',' + m + ',' + v + ',' + metric + ',' + std::to_string(values.size()) + ',' +
               detail::fmt(b.median) + ',' + detail::fmt(b.q1) + ',' + detail::fmt(b.q3) + ',' +
               detail::fmt(b.whisker_low) + ',' + detail::fmt(b.whisker_high) + ',' + detail::fmt(b.mean) + ',' + outl + '\n';
        return box_json(b, values.size());
    };

    json summary;
    summary["bump_region"] = {{"begin", b0}, {"end", grid}};
    summary["routing_rule"] = "nearest representative (Euclidean distance of the preprocessed shape)";
    std::set<std::string> assemblies_seen;
    for (const auto& [mv, per] : scores)
        for (const auto& [k, s] : per) assemblies_seen.insert(k.assembly_id);

    for (const std::string model : {"gp", "mlp"}) {
        const auto pit = scores.find({model, "pooled"});
        const auto cit = scores.find({model, "clustered"});
        if (pit == scores.end() || cit == scores.end()) continue;
        json mj;
        for (const std::string& scope : [&] {
                 std::vector<std::string> s{"all"};
                 s.insert(s.end(), assemblies_seen.begin(), assemblies_seen.end());
                 return s;
             }()) {
            std::size_t n = 0, improved = 0;
            double sum_p = 0, sum_c = 0, bump_p = 0, bump_c = 0, cov_p = 0, cov_c = 0, covm_p = 0, covm_c = 0;
            std::size_t n_cov = 0;
            std::vector<double> vp, vc, bp, bc;
            for (const auto& [k, sp] : pit->second) {
                if (scope != "all" && k.assembly_id != scope) continue;
                const auto sc_it = cit->second.find(k);
                if (sc_it == cit->second.end()) continue;
                const Score& sc = sc_it->second;
                ++n;
                if (sc.nrmse < sp.nrmse) ++improved;
                sum_p += sp.nrmse;
                sum_c += sc.nrmse;
                bump_p += sp.bump;
                bump_c += sc.bump;
                covm_p += sp.cov_measured;
                covm_c += sc.cov_measured;
                if (!std::isnan(sp.cov_truth) && !std::isnan(sc.cov_truth)) {
                    cov_p += sp.cov_truth;
                    cov_c += sc.cov_truth;
                    ++n_cov;
                }
                vp.push_back(sp.nrmse);
                vc.push_back(sc.nrmse);
                bp.push_back(sp.bump);
                bc.push_back(sc.bump);
            }
            if (n == 0) continue;
            const double dn = static_cast<double>(n);
            json j;
            j["cycles"] = n;
            j["improved_cycles"] = improved;
            j["improved_fraction"] = improved / dn;
            j["mean_nrmse_pooled"] = sum_p / dn;
            j["mean_nrmse_clustered"] = sum_c / dn;
            j["mean_bump_nrmse_pooled"] = bump_p / dn;
            j["mean_bump_nrmse_clustered"] = bump_c / dn;
            j["bump_reduction"] = bump_p > 0 ? 1.0 - bump_c / bump_p : 0.0;
            j["mean_coverage_measured_pooled"] = covm_p / dn;
            j["mean_coverage_measured_clustered"] = covm_c / dn;
            if (n_cov) {
                j["mean_coverage_truth_pooled"] = cov_p / static_cast<double>(n_cov);
                j["mean_coverage_truth_clustered"] = cov_c / static_cast<double>(n_cov);
            }
            j["box"] = {{"nrmse_pooled", add_box(scope, model, "pooled", "nrmse", vp)},
                        {"nrmse_clustered", add_box(scope, model, "clustered", "nrmse", vc)},
                        {"bump_nrmse_pooled", add_box(scope, model, "pooled", "bump_nrmse", bp)},
                        {"bump_nrmse_clustered", add_box(scope, model, "clustered", "bump_nrmse", bc)}};
            mj[scope] = j;
        }
        summary[model] = mj;
    }
    if (!floors.empty()) {
        summary["noise_floor"] = add_box("all", "measurement", "raw", "noise_floor", floors);
        summary["noise_floor"]["min"] = *std::min_element(floors.begin(), floors.end());
        summary["noise_floor"]["max"] = *std::max_element(floors.begin(), floors.end());
    }

    detail::write_file(l.evaluate() / "nrmse.csv", table);
    detail::write_file(l.evaluate() / "box_stats.csv", box);
    detail::write_file(l.evaluate() / "summary.json", summary.dump(2) + "\n");

    // wall-clock comparison of the GP ensembles (not part of the manifest)
    if (fs::exists(l.timing() / "train.csv") && fs::exists(l.timing() / "predict.csv")) {
        double pooled = 0, clustered = 0;
        const detail::Csv tr = detail::read_csv(l.timing() / "train.csv");
        for (const auto& r : tr.rows)
            if (r[tr.col("model")] == "gp") (r[tr.col("part")] == "pooled" ? pooled : clustered) += detail::real_field(r[tr.col("seconds")]);
        const detail::Csv pr = detail::read_csv(l.timing() / "predict.csv");
        for (const auto& r : pr.rows)
            if (r[pr.col("model")] == "gp") (r[pr.col("variant")] == "pooled" ? pooled : clustered) += detail::real_field(r[pr.col("seconds")]);
        json t = {{"gp_pooled_seconds", pooled}, {"gp_clustered_seconds", clustered},
                  {"speedup", clustered > 0 ? pooled / clustered : 0.0}};
        detail::write_file(l.timing() / "gp_speedup.json", t.dump(2) + "\n");
    }
    detail::write_file(l.out / "config.txt", to_text(cfg));
    write_manifest(cfg, l);

    std::string msg = "evaluate:";
    for (const std::string model : {"gp", "mlp"})
        if (summary.contains(model) && summary[model].contains("all")) {
            const auto& j = summary[model]["all"];
            char buf[160];
            std::snprintf(buf, sizeof buf, " %s clustered better on %zu/%zu cycles, bump NRMSE %.2f%% -> %.2f%%;",
                          model.c_str(), j["improved_cycles"].get<std::size_t>(), j["cycles"].get<std::size_t>(),
                          j["mean_bump_nrmse_pooled"].get<double>(), j["mean_bump_nrmse_clustered"].get<double>());
            msg += buf;
        }
    return msg;
}

inline std::string cmd_report(const RunConfig& cfg, const fs::path& out) {
    cfg.validate();
    const Layout l = make_layout(cfg, out);
    detail::require(l.evaluate() / "summary.json");
    detail::require(l.evaluate() / "box_stats.csv");
    detail::require(l.cluster() / "summary.json");
    detail::require(l.predict() / "predictions.csv");
    const CycleDataset ds = load_run_dataset(cfg, l);
    const PredictionTable preds = read_predictions(l.predict() / "predictions.csv", cfg.axial_grid_size);
    const auto targets = held_out_targets(cfg, l, ds);

    // one wide row per held-out axial point: measurement, truth and every CI band
    const std::vector<std::pair<std::string, std::string>> series{
        {"gp", "pooled"}, {"gp", "clustered"}, {"mlp", "pooled"}, {"mlp", "clustered"}};
    std::string prof = "assembly_id,cycle_id,axial_index,measured,truth";
    for (const auto& [m, v] : series) prof += "," + m + "_" + v + "_mean," + m + "_" + v + "_low," + m + "_" + v + "_high";
    prof += '\n';
    for (const auto& [key, h] : targets) {
        std::vector<const std::vector<UqPrediction>*> cols;
        for (const auto& [m, v] : series) {
            const auto it = preds.profiles.find({key.assembly_id, key.cycle_id, m, v});
            cols.push_back(it == preds.profiles.end() ? nullptr : &it->second);
        }
        for (std::size_t i = 0; i < h.measured.size(); ++i) {
            prof += key.assembly_id + ',' + key.cycle_id + ',' + std::to_string(i) + ',' +
                    (std::isnan(h.measured[i]) ? std::string() : detail::fmt(h.measured[i])) + ',' +
                    (h.truth.empty() ? std::string() : detail::fmt(h.truth[i]));
            for (const auto* c : cols) {
                if (!c) {
                    prof += ",,,";
                    continue;
                }
                const UqPrediction& u = (*c)[i];
                prof += ',' + detail::fmt(u.mean) + ',' + detail::fmt(u.ci95_low) + ',' + detail::fmt(u.ci95_high);
            }
            prof += '\n';
        }
    }
    detail::write_file(l.reports / "profiles.csv", prof);
    detail::write_file(l.reports / "box_stats.csv", detail::read_file(l.evaluate() / "box_stats.csv"));

    json report;
    report["seed"] = cfg.seed;
    report["config_hash"] = detail::hex64(hash_string(to_text(cfg)));
    report["training_partition"] = std::string(to_string(cfg.fanout));
    report["routing_rule"] =
        "held-out profiles are assigned to the cluster whose representative (k-means centroid or AP exemplar) is "
        "nearest in Euclidean distance to the profile's preprocessed shape";
    report["clusters"] = json::parse(detail::read_file(l.cluster() / "summary.json"));
    report["evaluation"] = json::parse(detail::read_file(l.evaluate() / "summary.json"));
    if (fs::exists(l.predict() / "routing.csv")) {
        const detail::Csv r = detail::read_csv(l.predict() / "routing.csv");
        json routes = json::object();
        for (const auto& row : r.rows)
            if (row[r.col("assigned")] == "1") routes[row[r.col("assembly_id")]][row[r.col("cycle_id")]] = detail::int_field(row[r.col("cluster")]);
        report["routes"] = routes;
    }
    detail::write_file(l.reports / "report.json", report.dump(2) + "\n");
    detail::write_file(l.out / "config.txt", to_text(cfg));
    write_manifest(cfg, l);
    return "report: -> " + l.reports.string();
}

// Every stage in order.
inline std::vector<std::string> run_all(const RunConfig& cfg, const fs::path& out, bool synthesize = true) {
    std::vector<std::string> log;
    if (synthesize) log.push_back(cmd_synth(cfg, out));
    log.push_back(cmd_preprocess(cfg, out));
    log.push_back(cmd_cluster(cfg, out));
    log.push_back(cmd_train(cfg, out));
    log.push_back(cmd_predict(cfg, out));
    log.push_back(cmd_evaluate(cfg, out));
    log.push_back(cmd_report(cfg, out));
    return log;
}

}  // namespace fluxlattice
