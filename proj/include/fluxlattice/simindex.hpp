#pragma once
// Agreement between two partitions of the same object set: pair-counting
// indices (RI, ARI) and information-theoretic ones (entropy, MI, NMI, AMI).
// Logarithms are base 2 throughout.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iterator>
#include <limits>
#include <map>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "data_model.hpp"
#include "error.hpp"

namespace fluxlattice {

enum class MeanKind { arithmetic, geometric };

struct PairCounts {
    std::uint64_t n11 = 0;  // same cluster in both
    std::uint64_t n00 = 0;  // different clusters in both
    std::uint64_t n01 = 0;  // same in the first, different in the second
    std::uint64_t n10 = 0;  // different in the first, same in the second
    std::uint64_t total() const { return n11 + n00 + n01 + n10; }
    bool operator==(const PairCounts&) const = default;
};

// r x s table of |C_i ∩ C'_j| with its marginals.
class ContingencyTable {
public:
    ContingencyTable(std::span<const int> a, std::span<const int> b) {
        if (a.size() != b.size())
            throw ValidationError("clusterings cover different object sets (" + std::to_string(a.size()) + " vs " +
                                  std::to_string(b.size()) + " objects)");
        const auto ca = canonical_labels({a.begin(), a.end()});
        const auto cb = canonical_labels({b.begin(), b.end()});
        rows_ = ca.empty() ? 0 : static_cast<std::size_t>(*std::max_element(ca.begin(), ca.end()) + 1);
        cols_ = cb.empty() ? 0 : static_cast<std::size_t>(*std::max_element(cb.begin(), cb.end()) + 1);
        cells_.assign(rows_ * cols_, 0);
        row_sums_.assign(rows_, 0);
        col_sums_.assign(cols_, 0);
        for (std::size_t i = 0; i < ca.size(); ++i) {
            const auto r = static_cast<std::size_t>(ca[i]);
            const auto c = static_cast<std::size_t>(cb[i]);
            ++cells_[r * cols_ + c];
            ++row_sums_[r];
            ++col_sums_[c];
        }
        n_ = ca.size();
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::uint64_t operator()(std::size_t i, std::size_t j) const { return cells_[i * cols_ + j]; }
    std::uint64_t row_sum(std::size_t i) const { return row_sums_[i]; }
    std::uint64_t col_sum(std::size_t j) const { return col_sums_[j]; }
    std::uint64_t n() const { return n_; }

    // Partitions identical up to relabeling.
    bool identical() const {
        if (rows_ != cols_) return false;
        for (std::size_t i = 0; i < rows_; ++i)
            for (std::size_t j = 0; j < cols_; ++j) {
                const auto v = (*this)(i, j);
                if (v != 0 && (v != row_sums_[i] || v != col_sums_[j])) return false;
            }
        return true;
    }

private:
    std::size_t rows_ = 0, cols_ = 0;
    std::uint64_t n_ = 0;
    std::vector<std::uint64_t> cells_, row_sums_, col_sums_;
};

namespace detail {
inline std::uint64_t choose2(std::uint64_t x) { return x < 2 ? 0 : x * (x - 1) / 2; }

inline double xlog2x_ratio(double p, double q) { return p > 0.0 ? p * std::log2(p / q) : 0.0; }

inline double generalized_mean(double a, double b, MeanKind kind) {
    return kind == MeanKind::arithmetic ? 0.5 * (a + b) : std::sqrt(a * b);
}

inline std::span<const int> labels_of(const Clustering& c) { return c.labels; }

inline void check_same_objects(const Clustering& a, const Clustering& b) {
    if (a.labels.size() != b.labels.size())
        throw ValidationError("clusterings cover different object sets");
    if (!a.keys.empty() && !b.keys.empty() && a.keys != b.keys)
        throw ValidationError("clusterings cover different object sets (profile keys differ)");
}
}  // namespace detail

inline PairCounts pair_counts(const ContingencyTable& t) {
    std::uint64_t same_both = 0, same_a = 0, same_b = 0;
    for (std::size_t i = 0; i < t.rows(); ++i)
        for (std::size_t j = 0; j < t.cols(); ++j) same_both += detail::choose2(t(i, j));
    for (std::size_t i = 0; i < t.rows(); ++i) same_a += detail::choose2(t.row_sum(i));
    for (std::size_t j = 0; j < t.cols(); ++j) same_b += detail::choose2(t.col_sum(j));
    PairCounts pc;
    pc.n11 = same_both;
    pc.n01 = same_a - same_both;
    pc.n10 = same_b - same_both;
    pc.n00 = detail::choose2(t.n()) - pc.n11 - pc.n01 - pc.n10;
    return pc;
}

inline PairCounts pair_counts(std::span<const int> a, std::span<const int> b) {
    return pair_counts(ContingencyTable(a, b));
}

inline double rand_index(std::span<const int> a, std::span<const int> b) {
    const PairCounts pc = pair_counts(a, b);
    if (pc.total() == 0) throw UndefinedIndexError("Rand index needs at least 2 objects");
    return static_cast<double>(pc.n11 + pc.n00) / static_cast<double>(pc.total());
}

inline double adjusted_rand_index(std::span<const int> a, std::span<const int> b) {
    const ContingencyTable t(a, b);
    if (t.n() < 2) throw UndefinedIndexError("adjusted Rand index needs at least 2 objects");
    const PairCounts pc = pair_counts(t);
    const double n00 = static_cast<double>(pc.n00), n11 = static_cast<double>(pc.n11);
    const double n01 = static_cast<double>(pc.n01), n10 = static_cast<double>(pc.n10);
    const double den = (n00 + n01) * (n01 + n11) + (n00 + n10) * (n10 + n11);
    if (den == 0.0) {
        if (t.identical()) return 1.0;
        throw UndefinedIndexError("adjusted Rand index has a zero denominator");
    }
    return 2.0 * (n00 * n11 - n01 * n10) / den;
}

inline double entropy(std::span<const int> labels) {
    std::map<int, std::uint64_t> sizes;
    for (int l : labels) ++sizes[l];
    const double n = static_cast<double>(labels.size());
    double h = 0.0;
    for (const auto& [l, s] : sizes) {
        const double p = static_cast<double>(s) / n;
        h -= p * std::log2(p);
    }
    return h;
}

inline double mutual_information(const ContingencyTable& t) {
    const double n = static_cast<double>(t.n());
    double mi = 0.0;
    for (std::size_t i = 0; i < t.rows(); ++i)
        for (std::size_t j = 0; j < t.cols(); ++j) {
            if (t(i, j) == 0) continue;
            const double pij = static_cast<double>(t(i, j)) / n;
            const double pi = static_cast<double>(t.row_sum(i)) / n;
            const double pj = static_cast<double>(t.col_sum(j)) / n;
            mi += detail::xlog2x_ratio(pij, pi * pj);
        }
    return std::max(mi, 0.0);
}

inline double mutual_information(std::span<const int> a, std::span<const int> b) {
    return mutual_information(ContingencyTable(a, b));
}

inline double nmi(std::span<const int> a, std::span<const int> b, MeanKind kind = MeanKind::arithmetic) {
    const ContingencyTable t(a, b);
    const double ha = entropy(a), hb = entropy(b);
    const double mi = mutual_information(t);
    const double mean = detail::generalized_mean(ha, hb, kind);
    if (mean <= 0.0) {
        if (t.identical()) return 1.0;
        // one partition is trivial, so nothing is shared
        if (ha > 0.0 || hb > 0.0) return 0.0;
        throw UndefinedIndexError("NMI undefined: both entropies are zero");
    }
    return std::clamp(mi / mean, 0.0, 1.0);
}

// Expected mutual information under the permutation model with fixed
// marginals (hypergeometric cell distribution), in bits.
inline double expected_mutual_information(const ContingencyTable& t) {
    const double n = static_cast<double>(t.n());
    if (t.n() == 0) return 0.0;
    const double lg_n = std::lgamma(n + 1.0);
    double emi = 0.0;
    for (std::size_t i = 0; i < t.rows(); ++i) {
        const double ai = static_cast<double>(t.row_sum(i));
        for (std::size_t j = 0; j < t.cols(); ++j) {
            const double bj = static_cast<double>(t.col_sum(j));
            const double lo = std::max(1.0, ai + bj - n);
            const double hi = std::min(ai, bj);
            const double log_const = std::lgamma(ai + 1.0) + std::lgamma(bj + 1.0) + std::lgamma(n - ai + 1.0) +
                                     std::lgamma(n - bj + 1.0) - lg_n;
            for (double nij = lo; nij <= hi; nij += 1.0) {
                const double log_p = log_const - std::lgamma(nij + 1.0) - std::lgamma(ai - nij + 1.0) -
                                     std::lgamma(bj - nij + 1.0) - std::lgamma(n - ai - bj + nij + 1.0);
                emi += (nij / n) * std::log2(n * nij / (ai * bj)) * std::exp(log_p);
            }
        }
    }
    return emi;
}

inline double expected_mutual_information(std::span<const int> a, std::span<const int> b) {
    return expected_mutual_information(ContingencyTable(a, b));
}

inline double ami(std::span<const int> a, std::span<const int> b, MeanKind kind = MeanKind::arithmetic) {
    const ContingencyTable t(a, b);
    const double ha = entropy(a), hb = entropy(b);
    const double mi = mutual_information(t);
    const double emi = expected_mutual_information(t);
    const double den = detail::generalized_mean(ha, hb, kind) - emi;
    const double num = mi - emi;
    if (den <= 1e-15) {
        if (t.identical()) return 1.0;
        if (std::abs(num) <= 1e-15) return 0.0;
        throw UndefinedIndexError("AMI undefined: non-positive denominator");
    }
    return num / den;
}

// Clustering overloads
inline PairCounts pair_counts(const Clustering& a, const Clustering& b) {
    detail::check_same_objects(a, b);
    return pair_counts(a.labels, b.labels);
}
inline double rand_index(const Clustering& a, const Clustering& b) {
    detail::check_same_objects(a, b);
    return rand_index(a.labels, b.labels);
}
inline double adjusted_rand_index(const Clustering& a, const Clustering& b) {
    detail::check_same_objects(a, b);
    return adjusted_rand_index(a.labels, b.labels);
}
inline double entropy(const Clustering& c) { return entropy(c.labels); }
inline double mutual_information(const Clustering& a, const Clustering& b) {
    detail::check_same_objects(a, b);
    return mutual_information(a.labels, b.labels);
}
inline double nmi(const Clustering& a, const Clustering& b, MeanKind kind = MeanKind::arithmetic) {
    detail::check_same_objects(a, b);
    return nmi(a.labels, b.labels, kind);
}
inline double ami(const Clustering& a, const Clustering& b, MeanKind kind = MeanKind::arithmetic) {
    detail::check_same_objects(a, b);
    return ami(a.labels, b.labels, kind);
}

struct AgreementScores {
    double ari = 0.0;
    double ami = 0.0;
    double nmi = 0.0;
};

inline AgreementScores agreement(std::span<const int> a, std::span<const int> b,
                                 MeanKind kind = MeanKind::arithmetic) {
    return {adjusted_rand_index(a, b), ami(a, b, kind), nmi(a, b, kind)};
}

// Pairwise ARI/NMI/AMI between assemblies over their common cycles.
struct AgreementMatrices {
    std::vector<std::string> assemblies;
    std::vector<std::string> common_cycles;
    std::vector<std::vector<double>> ari, nmi, ami;
};

inline AgreementMatrices cross_assembly_agreement(const std::map<std::string, Clustering>& labelings,
                                                  MeanKind kind = MeanKind::arithmetic) {
    if (labelings.size() < 2) throw ValidationError("cross-assembly agreement needs >= 2 assemblies");
    std::set<std::string> common;
    bool first = true;
    for (const auto& [assembly, c] : labelings) {
        if (c.keys.size() != c.labels.size()) throw ValidationError("clustering of " + assembly + " lacks profile keys");
        std::set<std::string> cycles;
        for (const auto& k : c.keys) cycles.insert(k.cycle_id);
        if (first) {
            common = std::move(cycles);
            first = false;
        } else {
            std::set<std::string> keep;
            std::set_intersection(common.begin(), common.end(), cycles.begin(), cycles.end(),
                                  std::inserter(keep, keep.begin()));
            common = std::move(keep);
        }
    }
    if (common.empty()) throw ValidationError("assemblies share no common cycles");

    AgreementMatrices m;
    m.common_cycles.assign(common.begin(), common.end());
    std::vector<std::vector<int>> restricted;
    for (const auto& [assembly, c] : labelings) {
        m.assemblies.push_back(assembly);
        std::map<std::string, int> by_cycle;
        for (std::size_t i = 0; i < c.keys.size(); ++i) by_cycle[c.keys[i].cycle_id] = c.labels[i];
        std::vector<int> r;
        for (const auto& cyc : m.common_cycles) r.push_back(by_cycle.at(cyc));
        restricted.push_back(std::move(r));
    }
    const std::size_t a = m.assemblies.size();
    const double nan = std::numeric_limits<double>::quiet_NaN();
    m.ari.assign(a, std::vector<double>(a, 1.0));
    m.nmi = m.ami = m.ari;
    for (std::size_t i = 0; i < a; ++i)
        for (std::size_t j = i + 1; j < a; ++j) {
            auto safe = [&](auto&& f) {
                try {
                    return f();
                } catch (const UndefinedIndexError&) {
                    return nan;
                }
            };
            const auto& x = restricted[i];
            const auto& y = restricted[j];
            m.ari[i][j] = m.ari[j][i] = safe([&] { return adjusted_rand_index(x, y); });
            m.nmi[i][j] = m.nmi[j][i] = safe([&] { return nmi(x, y, kind); });
            m.ami[i][j] = m.ami[j][i] = safe([&] { return ami(x, y, kind); });
        }
    return m;
}

// Long-format CSV: measure,assembly_a,assembly_b,value
inline void write_agreement_csv(std::ostream& out, const AgreementMatrices& m) {
    out << "measure,assembly_a,assembly_b,value\n";
    auto block = [&](const char* name, const std::vector<std::vector<double>>& mat) {
        for (std::size_t i = 0; i < m.assemblies.size(); ++i)
            for (std::size_t j = 0; j < m.assemblies.size(); ++j)
                out << name << ',' << m.assemblies[i] << ',' << m.assemblies[j] << ','
                    << text::format_double(mat[i][j]) << '\n';
    };
    block("ARI", m.ari);
    block("NMI", m.nmi);
    block("AMI", m.ami);
}

}  // namespace fluxlattice
