#pragma once
// Core domain types, CSV ingestion of wire-scan datasets, and dataset export.
//
// CSV schema, one row per measured axial point:
//   cycle_id,assembly_id,bank_position,scan_start_time,axial_index,count
// Timestamps are ISO 8601 UTC (YYYY-MM-DDTHH:MM:SS, optional trailing Z).

#include <algorithm>
#include <charconv>
#include <chrono>
#include <compare>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "error.hpp"

namespace fluxlattice {

inline constexpr int kAxialGridSize = 180;

using Timestamp = std::chrono::sys_seconds;

// ---------------------------------------------------------------------------
// text helpers
// ---------------------------------------------------------------------------
namespace text {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= s.size(); ++i) {
        if (i == s.size() || s[i] == sep) {
            out.push_back(trim(s.substr(start, i - start)));
            start = i + 1;
        }
    }
    return out;
}

inline bool parse_double(std::string_view s, double& out) {
    s = trim(s);
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc{} && ptr == s.data() + s.size() && !s.empty();
}

template <class Int>
bool parse_int(std::string_view s, Int& out) {
    s = trim(s);
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc{} && ptr == s.data() + s.size() && !s.empty();
}

// Shortest representation that parses back to the identical double.
inline std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

}  // namespace text

inline Timestamp parse_timestamp(std::string_view s) {
    s = text::trim(s);
    if (!s.empty() && s.back() == 'Z') s.remove_suffix(1);
    int y = 0;
    unsigned mo = 0, d = 0, h = 0, mi = 0, se = 0;
    auto field = [&](std::size_t pos, std::size_t len, auto& out) {
        return pos + len <= s.size() && text::parse_int(s.substr(pos, len), out);
    };
    bool ok = s.size() == 19 && s[4] == '-' && s[7] == '-' && (s[10] == 'T' || s[10] == ' ') &&
              s[13] == ':' && s[16] == ':' && field(0, 4, y) && field(5, 2, mo) && field(8, 2, d) &&
              field(11, 2, h) && field(14, 2, mi) && field(17, 2, se);
    using namespace std::chrono;
    year_month_day ymd{year{y}, month{mo}, day{d}};
    if (!ok || !ymd.ok() || h > 23 || mi > 59 || se > 60)
        throw ValidationError("malformed ISO 8601 timestamp '" + std::string(s) + "'");
    return sys_seconds{sys_days{ymd}} + hours{h} + minutes{mi} + seconds{se};
}

inline std::string format_timestamp(Timestamp t) {
    using namespace std::chrono;
    const auto day_point = floor<days>(t);
    const year_month_day ymd{day_point};
    const hh_mm_ss hms{t - day_point};
    char buf[32];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02dZ", int(ymd.year()),
                  unsigned(ymd.month()), unsigned(ymd.day()), int(hms.hours().count()),
                  int(hms.minutes().count()), int(hms.seconds().count()));
    return buf;
}

inline double hours_between(Timestamp from, Timestamp to) {
    return std::chrono::duration<double, std::ratio<3600>>(to - from).count();
}

// ---------------------------------------------------------------------------
// domain types
// ---------------------------------------------------------------------------

struct AxialCount {
    int axial_index = 0;
    double count = 0.0;
    bool operator==(const AxialCount&) const = default;
};

struct ProfileKey {
    std::string cycle_id;
    std::string assembly_id;
    auto operator<=>(const ProfileKey&) const = default;
    std::string str() const { return cycle_id + "/" + assembly_id; }
};

// One wire scan of one assembly in one cycle.
struct FluxProfile {
    std::string cycle_id;
    std::string assembly_id;
    double bank_position = 0.0;  // normalized rod-bank insertion
    Timestamp scan_start_time{};
    std::vector<AxialCount> counts;
    bool normalized = false;
    int axial_grid_size = kAxialGridSize;

    ProfileKey key() const { return {cycle_id, assembly_id}; }

    std::vector<double> values() const {
        std::vector<double> v;
        v.reserve(counts.size());
        for (const auto& c : counts) v.push_back(c.count);
        return v;
    }

    // Dense grid with NaN at missing axial points.
    std::vector<double> dense() const {
        std::vector<double> v(static_cast<std::size_t>(axial_grid_size),
                              std::numeric_limits<double>::quiet_NaN());
        for (const auto& c : counts) v[static_cast<std::size_t>(c.axial_index)] = c.count;
        return v;
    }

    void validate() const {
        if (axial_grid_size <= 0) throw ValidationError("axial_grid_size must be positive");
        if (counts.size() > static_cast<std::size_t>(axial_grid_size))
            throw ValidationError(key().str() + ": more points than the axial grid");
        int prev = -1;
        for (const auto& c : counts) {
            if (c.axial_index <= prev || c.axial_index >= axial_grid_size)
                throw ValidationError(key().str() + ": axial indices must be strictly increasing in [0, " +
                                      std::to_string(axial_grid_size) + ")");
            if (!normalized && !(c.count >= 0.0))
                throw ValidationError(key().str() + ": negative count at axial index " +
                                      std::to_string(c.axial_index));
            prev = c.axial_index;
        }
    }

    bool operator==(const FluxProfile&) const = default;
};

enum class Split { train, predict };

inline std::string_view to_string(Split s) { return s == Split::train ? "train" : "predict"; }

inline Split parse_split(std::string_view s) {
    if (s == "train") return Split::train;
    if (s == "predict") return Split::predict;
    throw ValidationError("unknown split role '" + std::string(s) + "'");
}

struct CycleDataset {
    std::vector<FluxProfile> profiles;
    std::map<std::string, Split> split;

    void validate() const {
        std::set<ProfileKey> seen;
        for (const auto& p : profiles) {
            p.validate();
            if (!seen.insert(p.key()).second)
                throw IntegrityError("duplicate profile " + p.key().str());
            if (!split.count(p.cycle_id))
                throw ValidationError("cycle " + p.cycle_id + " has no train/predict role");
        }
    }

    // Cycle ids in historical order: earliest scan time first, ties by id.
    std::vector<std::string> cycle_order() const {
        std::map<std::string, Timestamp> first;
        for (const auto& p : profiles) {
            auto [it, fresh] = first.emplace(p.cycle_id, p.scan_start_time);
            if (!fresh) it->second = std::min(it->second, p.scan_start_time);
        }
        std::vector<std::pair<Timestamp, std::string>> order;
        for (const auto& [id, t] : first) order.emplace_back(t, id);
        std::sort(order.begin(), order.end());
        std::vector<std::string> ids;
        for (auto& [t, id] : order) ids.push_back(std::move(id));
        return ids;
    }

    std::vector<std::string> assemblies() const {
        std::vector<std::string> out;
        for (const auto& p : profiles)
            if (std::find(out.begin(), out.end(), p.assembly_id) == out.end()) out.push_back(p.assembly_id);
        return out;
    }

    // Profiles of one assembly in historical cycle order, optionally restricted to a role.
    std::vector<const FluxProfile*> select(std::string_view assembly,
                                           std::optional<Split> role = std::nullopt) const {
        std::map<std::string, std::size_t> rank;
        const auto order = cycle_order();
        for (std::size_t i = 0; i < order.size(); ++i) rank[order[i]] = i;
        std::vector<const FluxProfile*> out;
        for (const auto& p : profiles) {
            if (p.assembly_id != assembly) continue;
            if (role && split.at(p.cycle_id) != *role) continue;
            out.push_back(&p);
        }
        std::sort(out.begin(), out.end(),
                  [&](const FluxProfile* a, const FluxProfile* b) { return rank[a->cycle_id] < rank[b->cycle_id]; });
        return out;
    }

    const FluxProfile* find(const ProfileKey& key) const {
        for (const auto& p : profiles)
            if (p.cycle_id == key.cycle_id && p.assembly_id == key.assembly_id) return &p;
        return nullptr;
    }

    bool operator==(const CycleDataset&) const = default;
};

enum class ClusterMethod { kmeans, affinity_propagation, ground_truth };

inline std::string_view to_string(ClusterMethod m) {
    switch (m) {
        case ClusterMethod::kmeans: return "kmeans";
        case ClusterMethod::affinity_propagation: return "affinity_propagation";
        case ClusterMethod::ground_truth: return "ground_truth";
    }
    return "unknown";
}

inline ClusterMethod parse_cluster_method(std::string_view s) {
    if (s == "kmeans") return ClusterMethod::kmeans;
    if (s == "affinity_propagation") return ClusterMethod::affinity_propagation;
    if (s == "ground_truth") return ClusterMethod::ground_truth;
    throw ValidationError("unknown clustering method '" + std::string(s) + "'");
}

// Relabel so cluster indices appear in order of first occurrence (0, 1, ...).
inline std::vector<int> canonical_labels(const std::vector<int>& labels) {
    std::map<int, int> remap;
    std::vector<int> out;
    out.reserve(labels.size());
    for (int l : labels) {
        auto [it, fresh] = remap.emplace(l, static_cast<int>(remap.size()));
        out.push_back(it->second);
    }
    return out;
}

// A partition of profiles into k non-empty clusters.
struct Clustering {
    std::vector<ProfileKey> keys;
    std::vector<int> labels;
    int k = 0;
    ClusterMethod method = ClusterMethod::ground_truth;
    std::vector<std::vector<double>> representatives;  // centroid or exemplar per cluster

    std::size_t size() const { return labels.size(); }

    std::vector<std::size_t> sizes() const {
        std::vector<std::size_t> s(static_cast<std::size_t>(std::max(k, 0)), 0);
        for (int l : labels) ++s.at(static_cast<std::size_t>(l));
        return s;
    }

    // "62+38"-style size string, in cluster-index order.
    std::string sizes_string() const {
        std::string out;
        for (std::size_t s : sizes()) out += (out.empty() ? "" : "+") + std::to_string(s);
        return out;
    }

    void validate() const {
        if (k < 1) throw ValidationError("clustering needs k >= 1");
        if (!keys.empty() && keys.size() != labels.size())
            throw ValidationError("clustering keys and labels differ in length");
        for (int l : labels)
            if (l < 0 || l >= k) throw ValidationError("cluster index out of range");
        for (std::size_t s : sizes())
            if (s == 0) throw ValidationError("empty cluster in clustering");
        std::set<ProfileKey> seen(keys.begin(), keys.end());
        if (seen.size() != keys.size()) throw ValidationError("profile appears twice in clustering");
        if (!representatives.empty() && representatives.size() != static_cast<std::size_t>(k))
            throw ValidationError("one representative per cluster required");
    }

    static Clustering from_labels(const std::vector<int>& raw, ClusterMethod method,
                                  std::vector<ProfileKey> keys = {}) {
        Clustering c;
        c.labels = canonical_labels(raw);
        c.k = c.labels.empty() ? 0 : *std::max_element(c.labels.begin(), c.labels.end()) + 1;
        c.method = method;
        c.keys = std::move(keys);
        return c;
    }
};

// Gaussian predictive summary at one query point.
struct UqPrediction {
    double bank_position = 0.0;
    double axial_location = 0.0;
    double mean = 0.0;
    double std = 0.0;
    double ci95_low = 0.0;
    double ci95_high = 0.0;
    std::string model_tag;

    static constexpr double kZ95 = 1.96;

    static UqPrediction from_moments(double bank, double axial, double mean, double std, std::string tag) {
        if (!(std >= 0.0)) std = 0.0;
        return {bank, axial, mean, std, mean - kZ95 * std, mean + kZ95 * std, std::move(tag)};
    }
};

// ---------------------------------------------------------------------------
// CSV ingestion / export
// ---------------------------------------------------------------------------

inline constexpr std::string_view kDatasetHeader =
    "cycle_id,assembly_id,bank_position,scan_start_time,axial_index,count";

struct IngestConfig {
    int axial_grid_size = kAxialGridSize;
    // Cycles listed here are held out for prediction; read from a
    // `cycle_id,role` sidecar when `split_path` is set, otherwise the last
    // `hold_out_last` cycles in historical order are held out.
    std::string split_path;
    std::size_t hold_out_last = 0;
};

inline std::map<std::string, Split> read_split_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open split file " + path);
    std::string line;
    std::size_t lineno = 0;
    std::map<std::string, Split> out;
    while (std::getline(in, line)) {
        ++lineno;
        if (text::trim(line).empty()) continue;
        auto f = text::split(line, ',');
        if (lineno == 1 && f.size() == 2 && f[0] == "cycle_id") continue;
        if (f.size() != 2) throw ParseError(lineno, "expected cycle_id,role");
        try {
            out[std::string(f[0])] = parse_split(f[1]);
        } catch (const ValidationError& e) {
            throw ParseError(lineno, e.what());
        }
    }
    return out;
}

inline void assign_split(CycleDataset& ds, const IngestConfig& cfg) {
    if (!cfg.split_path.empty()) {
        ds.split = read_split_csv(cfg.split_path);
        return;
    }
    const auto order = ds.cycle_order();
    ds.split.clear();
    for (std::size_t i = 0; i < order.size(); ++i)
        ds.split[order[i]] = i + cfg.hold_out_last >= order.size() ? Split::predict : Split::train;
}

inline CycleDataset parse_dataset(std::istream& in, const IngestConfig& cfg = {}) {
    std::string line;
    std::size_t lineno = 0;
    if (!std::getline(in, line)) throw ParseError(1, "missing header row");
    ++lineno;
    if (!line.empty() && line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
    {
        auto cols = text::split(line, ',');
        auto want = text::split(kDatasetHeader, ',');
        if (cols != want) throw ParseError(1, "header does not match '" + std::string(kDatasetHeader) + "'");
    }

    CycleDataset ds;
    std::map<ProfileKey, std::size_t> index;
    while (std::getline(in, line)) {
        ++lineno;
        if (text::trim(line).empty()) continue;
        auto f = text::split(line, ',');
        if (f.size() != 6) throw ParseError(lineno, "expected 6 fields, found " + std::to_string(f.size()));
        ProfileKey key{std::string(f[0]), std::string(f[1])};
        if (key.cycle_id.empty() || key.assembly_id.empty()) throw ParseError(lineno, "empty key field");
        double bank = 0.0, count = 0.0;
        int axial = 0;
        if (!text::parse_double(f[2], bank)) throw ParseError(lineno, "bad bank_position");
        Timestamp ts;
        try {
            ts = parse_timestamp(f[3]);
        } catch (const ValidationError& e) {
            throw ParseError(lineno, e.what());
        }
        if (!text::parse_int(f[4], axial)) throw ParseError(lineno, "bad axial_index");
        if (!text::parse_double(f[5], count)) throw ParseError(lineno, "bad count");
        if (axial < 0 || axial >= cfg.axial_grid_size)
            throw ValidationError("line " + std::to_string(lineno) + ": axial_index out of range");
        if (!(count >= 0.0))
            throw ValidationError("line " + std::to_string(lineno) + ": negative count");

        auto [it, fresh] = index.emplace(key, ds.profiles.size());
        if (fresh) {
            FluxProfile p;
            p.cycle_id = key.cycle_id;
            p.assembly_id = key.assembly_id;
            p.bank_position = bank;
            p.scan_start_time = ts;
            p.axial_grid_size = cfg.axial_grid_size;
            ds.profiles.push_back(std::move(p));
        }
        FluxProfile& p = ds.profiles[it->second];
        if (p.bank_position != bank || p.scan_start_time != ts)
            throw IntegrityError("line " + std::to_string(lineno) + ": metadata of " + key.str() +
                                 " differs between rows");
        for (const auto& c : p.counts)
            if (c.axial_index == axial)
                throw IntegrityError("line " + std::to_string(lineno) + ": duplicate point " + key.str() +
                                     " axial " + std::to_string(axial));
        p.counts.push_back({axial, count});
    }
    for (auto& p : ds.profiles)
        std::sort(p.counts.begin(), p.counts.end(),
                  [](const AxialCount& a, const AxialCount& b) { return a.axial_index < b.axial_index; });
    assign_split(ds, cfg);
    ds.validate();
    return ds;
}

inline CycleDataset load_dataset(const std::string& path, const IngestConfig& cfg = {}) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open dataset " + path);
    return parse_dataset(in, cfg);
}

inline void write_dataset(std::ostream& out, const CycleDataset& ds) {
    out << kDatasetHeader << '\n';
    for (const auto& p : ds.profiles) {
        const std::string prefix = p.cycle_id + ',' + p.assembly_id + ',' + text::format_double(p.bank_position) +
                                   ',' + format_timestamp(p.scan_start_time) + ',';
        for (const auto& c : p.counts)
            out << prefix << c.axial_index << ',' << text::format_double(c.count) << '\n';
    }
}

inline void save_dataset(const CycleDataset& ds, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write dataset " + path);
    write_dataset(out, ds);
}

inline void save_split(const CycleDataset& ds, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write split file " + path);
    out << "cycle_id,role\n";
    for (const auto& id : ds.cycle_order()) out << id << ',' << to_string(ds.split.at(id)) << '\n';
}

}  // namespace fluxlattice
