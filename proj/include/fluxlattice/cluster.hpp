#pragma once
// Partitional clustering of shape vectors: k-means (k-means++ seeding, Lloyd
// iterations, best of several restarts) and Affinity Propagation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "data_model.hpp"
#include "error.hpp"
#include "parallel.hpp"
#include "rng.hpp"
#include "simindex.hpp"

namespace fluxlattice {

using Matrix = Eigen::MatrixXd;

namespace detail {
inline void require_finite(const Matrix& m, const char* what) {
    if (!m.allFinite()) throw ValidationError(std::string(what) + " contains non-finite entries");
}
}  // namespace detail

// ---------------------------------------------------------------------------
// similarity
// ---------------------------------------------------------------------------

// S(i,j) = -||x_i - x_j||^2, zero diagonal.
inline Matrix similarity_matrix(const Matrix& points) {
    detail::require_finite(points, "points");
    const Eigen::Index n = points.rows();
    Matrix s = Matrix::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i + 1; j < n; ++j) s(i, j) = s(j, i) = -(points.row(i) - points.row(j)).squaredNorm();
    return s;
}

inline double median_offdiagonal(const Matrix& s) {
    std::vector<double> v;
    for (Eigen::Index i = 0; i < s.rows(); ++i)
        for (Eigen::Index j = 0; j < s.cols(); ++j)
            if (i != j) v.push_back(s(i, j));
    if (v.empty()) return 0.0;
    const std::size_t mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
    double m = v[mid];
    if (v.size() % 2 == 0) m = 0.5 * (m + *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid)));
    return m;
}

// ---------------------------------------------------------------------------
// k-means
// ---------------------------------------------------------------------------

struct KMeansConfig {
    int k = 2;
    int restarts = 20;
    int max_iter = 300;
    double tol = 1e-8;  // max centroid shift (Euclidean) that counts as converged
    std::uint64_t seed = 0;
    int jobs = 1;

    void validate() const {
        if (k < 1) throw ConfigError("kmeans k must be >= 1");
        if (restarts < 1) throw ConfigError("kmeans restarts must be >= 1");
        if (max_iter < 1) throw ConfigError("kmeans max_iter must be >= 1");
        if (!(tol > 0.0)) throw ConfigError("kmeans tol must be > 0");
    }
};

struct KMeansResult {
    Clustering clustering;
    double inertia = 0.0;
    std::vector<double> inertia_history;  // per Lloyd iteration of the chosen restart
    int iterations = 0;
    int best_restart = 0;
};

namespace detail {

struct LloydRun {
    Matrix centroids;
    std::vector<int> labels;
    double inertia = 0.0;
    std::vector<double> history;
    int iterations = 0;
};

// Nearest centroid, ties to the lowest index. Returns squared distance.
inline double nearest(const Matrix& points, Eigen::Index i, const Matrix& centroids, int& label) {
    double best = std::numeric_limits<double>::infinity();
    label = 0;
    for (Eigen::Index c = 0; c < centroids.rows(); ++c) {
        const double d = (points.row(i) - centroids.row(c)).squaredNorm();
        if (d < best) {
            best = d;
            label = static_cast<int>(c);
        }
    }
    return best;
}

inline Matrix kmeanspp_seed(const Matrix& points, int k, Rng& rng) {
    const Eigen::Index n = points.rows();
    Matrix centroids(k, points.cols());
    std::vector<char> chosen(static_cast<std::size_t>(n), 0);
    std::uniform_int_distribution<Eigen::Index> uni(0, n - 1);
    Eigen::Index first = uni(rng);
    centroids.row(0) = points.row(first);
    chosen[static_cast<std::size_t>(first)] = 1;
    std::vector<double> d2(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) d2[static_cast<std::size_t>(i)] = (points.row(i) - centroids.row(0)).squaredNorm();
    for (int c = 1; c < k; ++c) {
        double total = 0.0;
        for (double v : d2) total += v;
        Eigen::Index pick = -1;
        if (total > 0.0) {
            std::uniform_real_distribution<double> u(0.0, total);
            double r = u(rng), acc = 0.0;
            for (Eigen::Index i = 0; i < n; ++i) {
                acc += d2[static_cast<std::size_t>(i)];
                if (acc >= r && d2[static_cast<std::size_t>(i)] > 0.0) {
                    pick = i;
                    break;
                }
            }
            if (pick < 0)
                for (Eigen::Index i = n - 1; i >= 0; --i)
                    if (d2[static_cast<std::size_t>(i)] > 0.0) {
                        pick = i;
                        break;
                    }
        }
        if (pick < 0) {
            // all remaining mass is zero (duplicates): take any unchosen point
            std::vector<Eigen::Index> rest;
            for (Eigen::Index i = 0; i < n; ++i)
                if (!chosen[static_cast<std::size_t>(i)]) rest.push_back(i);
            std::uniform_int_distribution<std::size_t> ur(0, rest.size() - 1);
            pick = rest[ur(rng)];
        }
        chosen[static_cast<std::size_t>(pick)] = 1;
        centroids.row(c) = points.row(pick);
        for (Eigen::Index i = 0; i < n; ++i)
            d2[static_cast<std::size_t>(i)] =
                std::min(d2[static_cast<std::size_t>(i)], (points.row(i) - centroids.row(c)).squaredNorm());
    }
    return centroids;
}

inline double assign_all(const Matrix& points, const Matrix& centroids, std::vector<int>& labels,
                         std::vector<double>& dist) {
    double inertia = 0.0;
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
        dist[static_cast<std::size_t>(i)] = nearest(points, i, centroids, labels[static_cast<std::size_t>(i)]);
        inertia += dist[static_cast<std::size_t>(i)];
    }
    return inertia;
}

// Moves the centroid of each empty cluster onto the point farthest from its
// own centroid, then reassigns that point.
inline void repair_empty(const Matrix& points, Matrix& centroids, std::vector<int>& labels, std::vector<double>& dist) {
    const int k = static_cast<int>(centroids.rows());
    for (int c = 0; c < k; ++c) {
        std::vector<std::size_t> counts(static_cast<std::size_t>(k), 0);
        for (int l : labels) ++counts[static_cast<std::size_t>(l)];
        if (counts[static_cast<std::size_t>(c)] > 0) continue;
        std::size_t far = 0;
        double far_d = -1.0;
        for (std::size_t i = 0; i < labels.size(); ++i)
            if (counts[static_cast<std::size_t>(labels[i])] > 1 && dist[i] > far_d) {
                far_d = dist[i];
                far = i;
            }
        centroids.row(c) = points.row(static_cast<Eigen::Index>(far));
        labels[far] = c;
        dist[far] = 0.0;
    }
}

inline LloydRun lloyd(const Matrix& points, const KMeansConfig& cfg, Rng& rng) {
    const Eigen::Index n = points.rows();
    LloydRun run;
    run.centroids = kmeanspp_seed(points, cfg.k, rng);
    run.labels.assign(static_cast<std::size_t>(n), 0);
    std::vector<double> dist(static_cast<std::size_t>(n));
    for (int it = 0; it < cfg.max_iter; ++it) {
        assign_all(points, run.centroids, run.labels, dist);
        repair_empty(points, run.centroids, run.labels, dist);
        double inertia = 0.0;
        for (double d : dist) inertia += d;
        run.history.push_back(inertia);
        run.iterations = it + 1;

        Matrix next = Matrix::Zero(cfg.k, points.cols());
        std::vector<double> counts(static_cast<std::size_t>(cfg.k), 0.0);
        for (Eigen::Index i = 0; i < n; ++i) {
            next.row(run.labels[static_cast<std::size_t>(i)]) += points.row(i);
            counts[static_cast<std::size_t>(run.labels[static_cast<std::size_t>(i)])] += 1.0;
        }
        double shift = 0.0;
        for (int c = 0; c < cfg.k; ++c) {
            next.row(c) /= counts[static_cast<std::size_t>(c)];
            shift = std::max(shift, (next.row(c) - run.centroids.row(c)).norm());
        }
        run.centroids = std::move(next);
        if (shift <= cfg.tol) break;
    }
    run.inertia = assign_all(points, run.centroids, run.labels, dist);
    repair_empty(points, run.centroids, run.labels, dist);
    run.inertia = 0.0;
    for (double d : dist) run.inertia += d;
    return run;
}

}  // namespace detail

inline KMeansResult kmeans_fit(const Matrix& points, const KMeansConfig& cfg) {
    cfg.validate();
    detail::require_finite(points, "points");
    if (cfg.k > points.rows())
        throw ConfigError("kmeans k = " + std::to_string(cfg.k) + " exceeds the number of points " +
                          std::to_string(points.rows()));
    std::vector<detail::LloydRun> runs(static_cast<std::size_t>(cfg.restarts));
    parallel_for(runs.size(), cfg.jobs, [&](std::size_t r) {
        Rng rng = make_rng(cfg.seed, {0x6b6d65616e73ULL, r});
        runs[r] = detail::lloyd(points, cfg, rng);
    });
    std::size_t best = 0;
    for (std::size_t r = 1; r < runs.size(); ++r)
        if (runs[r].inertia < runs[best].inertia) best = r;
    const auto& run = runs[best];

    KMeansResult res;
    res.clustering = Clustering::from_labels(run.labels, ClusterMethod::kmeans);
    // centroids follow the canonical relabeling
    res.clustering.representatives.resize(static_cast<std::size_t>(res.clustering.k));
    for (std::size_t i = 0; i < run.labels.size(); ++i) {
        auto& rep = res.clustering.representatives[static_cast<std::size_t>(res.clustering.labels[i])];
        if (rep.empty())
            for (Eigen::Index c = 0; c < run.centroids.cols(); ++c) rep.push_back(run.centroids(run.labels[i], c));
    }
    res.inertia = run.inertia;
    res.inertia_history = run.history;
    res.iterations = run.iterations;
    res.best_restart = static_cast<int>(best);
    return res;
}

// ---------------------------------------------------------------------------
// Affinity Propagation
// ---------------------------------------------------------------------------

struct ApConfig {
    std::optional<double> preference;  // median off-diagonal similarity when unset
    double damping = 0.9;
    int max_iter = 1000;
    int convergence_iter = 15;

    void validate() const {
        if (!(damping >= 0.5 && damping < 1.0)) throw ConfigError("AP damping must lie in [0.5, 1)");
        if (max_iter < 1) throw ConfigError("AP max_iter must be >= 1");
        if (convergence_iter < 1) throw ConfigError("AP convergence_iter must be >= 1");
    }
};

struct ApResult {
    Clustering clustering;
    std::vector<int> exemplars;  // exemplar point index per cluster (canonical order)
    bool converged = false;
    int iterations = 0;
    double preference = 0.0;
};

namespace detail {

inline std::vector<int> assign_to_exemplars(const Matrix& s, const std::vector<int>& exemplars) {
    const Eigen::Index n = s.rows();
    std::vector<int> labels(static_cast<std::size_t>(n), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
        int best = 0;
        double best_s = -std::numeric_limits<double>::infinity();
        for (std::size_t e = 0; e < exemplars.size(); ++e) {
            if (exemplars[e] == i) {
                best = static_cast<int>(e);
                break;
            }
            if (s(i, exemplars[e]) > best_s) {
                best_s = s(i, exemplars[e]);
                best = static_cast<int>(e);
            }
        }
        labels[static_cast<std::size_t>(i)] = best;
    }
    return labels;
}

}  // namespace detail

// Affinity Propagation on a similarity matrix; the diagonal is replaced by the preference.
inline ApResult ap_fit(const Matrix& similarity, const ApConfig& cfg) {
    cfg.validate();
    if (similarity.rows() != similarity.cols()) throw ValidationError("similarity matrix must be square");
    detail::require_finite(similarity, "similarity matrix");
    const Eigen::Index n = similarity.rows();
    if (n == 0) throw ValidationError("similarity matrix is empty");

    ApResult res;
    res.preference = cfg.preference ? *cfg.preference : median_offdiagonal(similarity);
    if (n == 1) {
        res.exemplars = {0};
        res.clustering = Clustering::from_labels({0}, ClusterMethod::affinity_propagation);
        res.converged = true;
        return res;
    }

    Matrix s = similarity;
    s.diagonal().setConstant(res.preference);
    // Symmetric instances can leave two candidate exemplars exactly tied with
    // zero evidence forever; a fixed-seed perturbation at machine precision
    // breaks the tie without changing any non-degenerate outcome.
    {
        Rng tie(0x5eed);
        std::normal_distribution<double> g;
        const double eps = std::numeric_limits<double>::epsilon();
        const double tiny = std::numeric_limits<double>::min() * 100.0;
        for (Eigen::Index j = 0; j < n; ++j)
            for (Eigen::Index i = 0; i < n; ++i) s(i, j) += (eps * std::abs(s(i, j)) + tiny) * g(tie);
    }
    Matrix r = Matrix::Zero(n, n), a = Matrix::Zero(n, n);
    const double damp = cfg.damping, keep = 1.0 - cfg.damping;

    std::vector<int> current, last_nonempty;
    int stable = 0;
    for (int it = 0; it < cfg.max_iter; ++it) {
        res.iterations = it + 1;
        // responsibilities
        for (Eigen::Index i = 0; i < n; ++i) {
            double first = -std::numeric_limits<double>::infinity(), second = first;
            Eigen::Index arg = 0;
            for (Eigen::Index k = 0; k < n; ++k) {
                const double v = a(i, k) + s(i, k);
                if (v > first) {
                    second = first;
                    first = v;
                    arg = k;
                } else if (v > second) {
                    second = v;
                }
            }
            for (Eigen::Index k = 0; k < n; ++k) {
                const double computed = s(i, k) - (k == arg ? second : first);
                r(i, k) = damp * r(i, k) + keep * computed;
            }
        }
        // availabilities
        for (Eigen::Index k = 0; k < n; ++k) {
            double col = 0.0;
            for (Eigen::Index i = 0; i < n; ++i) col += (i == k) ? r(k, k) : std::max(r(i, k), 0.0);
            for (Eigen::Index i = 0; i < n; ++i) {
                double computed;
                if (i == k)
                    computed = col - r(k, k);
                else
                    computed = std::min(0.0, col - std::max(r(i, k), 0.0));
                a(i, k) = damp * a(i, k) + keep * computed;
            }
        }
        std::vector<int> ex;
        for (Eigen::Index k = 0; k < n; ++k)
            if (r(k, k) + a(k, k) > 0.0) ex.push_back(static_cast<int>(k));
        if (ex == current)
            ++stable;
        else
            stable = 1;
        current = std::move(ex);
        if (!current.empty()) last_nonempty = current;
        if (!current.empty() && stable >= cfg.convergence_iter) {
            res.converged = true;
            break;
        }
    }

    std::vector<int> exemplars = !current.empty() ? current : last_nonempty;
    if (exemplars.empty()) {
        Eigen::Index best = 0;
        for (Eigen::Index k = 1; k < n; ++k)
            if (r(k, k) + a(k, k) > r(best, best) + a(best, best)) best = k;
        exemplars = {static_cast<int>(best)};
    }
    const std::vector<int> raw = detail::assign_to_exemplars(s, exemplars);
    res.clustering = Clustering::from_labels(raw, ClusterMethod::affinity_propagation);
    res.exemplars.assign(static_cast<std::size_t>(res.clustering.k), -1);
    for (std::size_t i = 0; i < raw.size(); ++i)
        res.exemplars[static_cast<std::size_t>(res.clustering.labels[i])] = exemplars[static_cast<std::size_t>(raw[i])];
    return res;
}

// AP on points; representatives are the exemplar rows.
inline ApResult ap_fit_points(const Matrix& points, const ApConfig& cfg) {
    ApResult res = ap_fit(similarity_matrix(points), cfg);
    for (int e : res.exemplars) {
        std::vector<double> rep(static_cast<std::size_t>(points.cols()));
        for (Eigen::Index c = 0; c < points.cols(); ++c) rep[static_cast<std::size_t>(c)] = points(e, c);
        res.clustering.representatives.push_back(std::move(rep));
    }
    return res;
}

// Scans preferences from the median similarity down to well below the most
// negative one and returns the middle of the longest run of candidates that
// converge to exactly `target_k` clusters. Falls back to the candidate whose
// cluster count is closest to the target.
inline double tune_ap_preference(const Matrix& similarity, int target_k, const ApConfig& base, int candidates = 40) {
    const double median = median_offdiagonal(similarity);
    double most_negative = 0.0;
    for (Eigen::Index i = 0; i < similarity.rows(); ++i)
        for (Eigen::Index j = 0; j < similarity.cols(); ++j)
            if (i != j) most_negative = std::min(most_negative, similarity(i, j));
    const double lo = std::max(std::abs(median), 1e-12);
    const double hi = std::max(std::abs(most_negative) * static_cast<double>(similarity.rows()), lo * 10.0);
    std::vector<double> prefs;
    std::vector<int> ks;
    std::vector<char> ok;
    for (int c = 0; c < candidates; ++c) {
        const double t = candidates == 1 ? 0.0 : static_cast<double>(c) / (candidates - 1);
        const double pref = -lo * std::pow(hi / lo, t);
        ApConfig cfg = base;
        cfg.preference = pref;
        const ApResult r = ap_fit(similarity, cfg);
        prefs.push_back(pref);
        ks.push_back(r.clustering.k);
        ok.push_back(r.converged && r.clustering.k == target_k);
    }
    int best_start = -1, best_len = 0;
    for (int c = 0; c < candidates;) {
        if (!ok[static_cast<std::size_t>(c)]) {
            ++c;
            continue;
        }
        int e = c;
        while (e < candidates && ok[static_cast<std::size_t>(e)]) ++e;
        if (e - c > best_len) {
            best_len = e - c;
            best_start = c;
        }
        c = e;
    }
    if (best_start >= 0) {
        // geometric middle of the run
        const double p0 = prefs[static_cast<std::size_t>(best_start)];
        const double p1 = prefs[static_cast<std::size_t>(best_start + best_len - 1)];
        return -std::sqrt(p0 * p1);
    }
    std::size_t pick = 0;
    for (std::size_t c = 1; c < prefs.size(); ++c)
        if (std::abs(ks[c] - target_k) < std::abs(ks[pick] - target_k)) pick = c;
    return prefs[pick];
}

// ---------------------------------------------------------------------------
// protocol: run both methods and score their agreement
// ---------------------------------------------------------------------------

struct ProtocolResult {
    KMeansResult kmeans;
    ApResult ap;
    AgreementScores agreement;
    std::string kmeans_sizes;
    std::string ap_sizes;
};

inline ProtocolResult cluster_protocol(const Matrix& shapes, const std::vector<ProfileKey>& keys,
                                       const KMeansConfig& kmeans_cfg, const ApConfig& ap_cfg,
                                       MeanKind mean = MeanKind::arithmetic) {
    if (!keys.empty() && static_cast<Eigen::Index>(keys.size()) != shapes.rows())
        throw ValidationError("one profile key per shape row required");
    ProtocolResult out;
    out.kmeans = kmeans_fit(shapes, kmeans_cfg);
    out.ap = ap_fit_points(shapes, ap_cfg);
    out.kmeans.clustering.keys = keys;
    out.ap.clustering.keys = keys;
    if (shapes.rows() >= 2)
        out.agreement = agreement(out.kmeans.clustering.labels, out.ap.clustering.labels, mean);
    else
        out.agreement = {1.0, 1.0, 1.0};
    out.kmeans_sizes = out.kmeans.clustering.sizes_string();
    out.ap_sizes = out.ap.clustering.sizes_string();
    return out;
}

// Index of the representative nearest (Euclidean) to `shape`, ties to the lowest index.
inline int nearest_representative(const Clustering& c, std::span<const double> shape) {
    if (c.representatives.empty()) throw RoutingError("clustering has no representatives");
    int best = -1;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < c.representatives.size(); ++r) {
        const auto& rep = c.representatives[r];
        if (rep.size() != shape.size()) throw RoutingError("shape length differs from representative length");
        double d = 0.0;
        for (std::size_t i = 0; i < rep.size(); ++i) d += (rep[i] - shape[i]) * (rep[i] - shape[i]);
        if (d < best_d) {
            best_d = d;
            best = static_cast<int>(r);
        }
    }
    if (best < 0) throw RoutingError("profile could not be assigned to any cluster");
    return best;
}

}  // namespace fluxlattice
