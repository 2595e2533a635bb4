#include <gtest/gtest.h>

#include <random>

#include "fluxlattice/cluster.hpp"
#include "oracles/oracles.hpp"

namespace fl = fluxlattice;

namespace {

// Two (or more) isotropic Gaussian blobs; returns points and generating labels.
std::pair<fl::Matrix, std::vector<int>> blobs(const std::vector<std::vector<double>>& centers, int per_blob,
                                              double sigma, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, sigma);
    const auto d = static_cast<Eigen::Index>(centers.front().size());
    fl::Matrix x(static_cast<Eigen::Index>(centers.size()) * per_blob, d);
    std::vector<int> labels;
    Eigen::Index r = 0;
    for (std::size_t c = 0; c < centers.size(); ++c)
        for (int i = 0; i < per_blob; ++i, ++r) {
            for (Eigen::Index j = 0; j < d; ++j) x(r, j) = centers[c][static_cast<std::size_t>(j)] + g(rng);
            labels.push_back(static_cast<int>(c));
        }
    return {x, labels};
}

oracle::Dense to_dense(const fl::Matrix& m) {
    oracle::Dense d(static_cast<std::size_t>(m.rows()), std::vector<double>(static_cast<std::size_t>(m.cols())));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) d[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = m(i, j);
    return d;
}

}  // namespace

TEST(Similarity, IdenticalPointsAllZero) {
    fl::Matrix x(3, 2);
    x << 1, 2, 1, 2, 1, 2;
    EXPECT_TRUE(fl::similarity_matrix(x).isZero(0.0));
}

TEST(Similarity, UnitOffset) {
    fl::Matrix x(2, 3);
    x << 0, 0, 0, 0, 1, 0;
    const auto s = fl::similarity_matrix(x);
    EXPECT_DOUBLE_EQ(s(0, 1), -1.0);
    EXPECT_DOUBLE_EQ(s(0, 0), 0.0);
}

TEST(Similarity, MatchesPerPairComputation) {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(-3.0, 3.0);
    fl::Matrix x(4, 3);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = u(rng);
    const auto s = fl::similarity_matrix(x);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) {
            double d2 = 0.0;
            for (int c = 0; c < 3; ++c) d2 += (x(i, c) - x(j, c)) * (x(i, c) - x(j, c));
            EXPECT_NEAR(s(i, j), -d2, 1e-12);
        }
}

TEST(Similarity, NonFiniteRejected) {
    fl::Matrix x(2, 2);
    x << 0, 1, std::nan(""), 0;
    EXPECT_THROW(fl::similarity_matrix(x), fl::ValidationError);
}

TEST(KMeans, KEqualsNGivesZeroInertia) {
    fl::Matrix x(4, 2);
    x << 0, 0, 1, 0, 0, 5, 3, 3;
    fl::KMeansConfig cfg;
    cfg.k = 4;
    const auto r = fl::kmeans_fit(x, cfg);
    EXPECT_NEAR(r.inertia, 0.0, 1e-12);
    EXPECT_EQ(r.clustering.k, 4);
    for (int i = 0; i < 4; ++i) {
        const auto& rep = r.clustering.representatives[static_cast<std::size_t>(r.clustering.labels[static_cast<std::size_t>(i)])];
        EXPECT_NEAR(rep[0], x(i, 0), 1e-12);
        EXPECT_NEAR(rep[1], x(i, 1), 1e-12);
    }
}

TEST(KMeans, KOneGivesMeanAndTotalVariance) {
    auto [x, labels] = blobs({{0, 0, 0}, {4, 1, -2}}, 15, 1.0, 2);
    fl::KMeansConfig cfg;
    cfg.k = 1;
    const auto r = fl::kmeans_fit(x, cfg);
    const Eigen::RowVectorXd mean = x.colwise().mean();
    for (Eigen::Index c = 0; c < 3; ++c) EXPECT_NEAR(r.clustering.representatives[0][static_cast<std::size_t>(c)], mean(c), 1e-12);
    const double total = (x.rowwise() - mean).squaredNorm();
    EXPECT_NEAR(r.inertia, total, 1e-9 * total);
}

TEST(KMeans, SeparatedBlobsRecovered) {
    auto [x, labels] = blobs({{0, 0}, {10, 0}}, 30, 1.0, 7);
    const auto r = fl::kmeans_fit(x, fl::KMeansConfig{});
    EXPECT_DOUBLE_EQ(fl::adjusted_rand_index(r.clustering.labels, labels), 1.0);
    EXPECT_DOUBLE_EQ(oracle::adjusted_rand_index(r.clustering.labels, labels).value(), 1.0);
}

TEST(KMeans, InertiaNonIncreasingAcrossIterations) {
    auto [x, labels] = blobs({{0, 0}, {3, 0}, {0, 3}}, 25, 1.2, 9);
    fl::KMeansConfig cfg;
    cfg.k = 3;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        cfg.seed = seed;
        const auto r = fl::kmeans_fit(x, cfg);
        for (std::size_t i = 1; i < r.inertia_history.size(); ++i)
            EXPECT_LE(r.inertia_history[i], r.inertia_history[i - 1] + 1e-9);
    }
}

TEST(KMeans, RowPermutationInvariant) {
    auto [x, labels] = blobs({{0, 0}, {6, 6}}, 20, 1.0, 12);
    const auto r = fl::kmeans_fit(x, fl::KMeansConfig{});
    std::vector<int> perm(static_cast<std::size_t>(x.rows()));
    std::iota(perm.begin(), perm.end(), 0);
    std::mt19937_64 rng(1);
    std::shuffle(perm.begin(), perm.end(), rng);
    fl::Matrix xp(x.rows(), x.cols());
    for (std::size_t i = 0; i < perm.size(); ++i) xp.row(static_cast<Eigen::Index>(i)) = x.row(perm[i]);
    const auto rp = fl::kmeans_fit(xp, fl::KMeansConfig{});
    std::vector<int> back(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) back[static_cast<std::size_t>(perm[i])] = rp.clustering.labels[i];
    EXPECT_DOUBLE_EQ(fl::adjusted_rand_index(r.clustering.labels, back), 1.0);
}

TEST(KMeans, DeterministicAcrossJobs) {
    auto [x, labels] = blobs({{0, 0}, {2, 1}}, 40, 1.0, 3);
    fl::KMeansConfig a, b;
    b.jobs = 4;
    const auto ra = fl::kmeans_fit(x, a), rb = fl::kmeans_fit(x, b);
    EXPECT_EQ(ra.clustering.labels, rb.clustering.labels);
    EXPECT_EQ(ra.inertia, rb.inertia);
}

TEST(KMeans, Errors) {
    fl::Matrix x(2, 2);
    x << 0, 0, 1, 1;
    fl::KMeansConfig cfg;
    cfg.k = 3;
    EXPECT_THROW(fl::kmeans_fit(x, cfg), fl::ConfigError);
    x(0, 0) = std::numeric_limits<double>::infinity();
    cfg.k = 1;
    EXPECT_THROW(fl::kmeans_fit(x, cfg), fl::ValidationError);
}

TEST(AffinityPropagation, SinglePoint) {
    const auto r = fl::ap_fit(fl::Matrix::Zero(1, 1), fl::ApConfig{});
    EXPECT_EQ(r.clustering.k, 1);
    EXPECT_EQ(r.exemplars, std::vector<int>{0});
}

TEST(AffinityPropagation, CollinearPointsMatchExhaustiveSearch) {
    fl::Matrix x(3, 1);
    x << 0, 1, 10;
    const fl::Matrix s = fl::similarity_matrix(x);
    fl::ApConfig cfg;
    cfg.preference = -25.0;
    cfg.damping = 0.5;
    const auto r = fl::ap_fit(s, cfg);
    EXPECT_TRUE(r.converged);
    EXPECT_EQ(r.clustering.k, 2);
    EXPECT_EQ(r.clustering.labels[0], r.clustering.labels[1]);
    EXPECT_NE(r.clustering.labels[0], r.clustering.labels[2]);
    const auto best = oracle::best_exemplar_partition(to_dense(s), -25.0);
    EXPECT_DOUBLE_EQ(fl::adjusted_rand_index(r.clustering.labels, best), 1.0);
}

TEST(AffinityPropagation, MatchesExhaustiveSearchOnSmallInstances) {
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> u(0.0, 10.0);
    int agree = 0;
    for (int t = 0; t < 20; ++t) {
        fl::Matrix x(7, 2);
        for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = u(rng);
        const fl::Matrix s = fl::similarity_matrix(x);
        fl::ApConfig cfg;
        cfg.preference = fl::median_offdiagonal(s);
        cfg.damping = 0.5;
        const auto r = fl::ap_fit(s, cfg);
        const auto best = oracle::best_exemplar_partition(to_dense(s), *cfg.preference);
        if (r.converged && fl::adjusted_rand_index(r.clustering.labels, best) > 1.0 - 1e-12) ++agree;
    }
    // message passing is a heuristic; it should find the optimum on most tiny instances
    EXPECT_GE(agree, 16);
}

TEST(AffinityPropagation, TightBlobsWithMedianPreference) {
    auto [x, labels] = blobs({{0, 0}, {50, 50}}, 15, 0.5, 5);
    const auto r = fl::ap_fit(fl::similarity_matrix(x), fl::ApConfig{});
    EXPECT_EQ(r.clustering.k, 2);
    EXPECT_DOUBLE_EQ(fl::adjusted_rand_index(r.clustering.labels, labels), 1.0);
}

TEST(AffinityPropagation, ExemplarsLabelThemselvesAndAssignmentsAreBest) {
    auto [x, labels] = blobs({{0, 0}, {5, 0}, {0, 5}}, 12, 1.0, 8);
    const fl::Matrix s = fl::similarity_matrix(x);
    const auto r = fl::ap_fit(s, fl::ApConfig{});
    for (std::size_t c = 0; c < r.exemplars.size(); ++c)
        EXPECT_EQ(r.clustering.labels[static_cast<std::size_t>(r.exemplars[c])], static_cast<int>(c));
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
        if (std::find(r.exemplars.begin(), r.exemplars.end(), i) != r.exemplars.end()) continue;
        const int mine = r.exemplars[static_cast<std::size_t>(r.clustering.labels[static_cast<std::size_t>(i)])];
        for (int e : r.exemplars) EXPECT_GE(s(i, mine), s(i, e));
    }
}

TEST(AffinityPropagation, ShiftInvariance) {
    auto [x, labels] = blobs({{0, 0}, {4, 4}}, 15, 1.0, 10);
    const fl::Matrix s = fl::similarity_matrix(x);
    fl::ApConfig cfg;
    cfg.preference = fl::median_offdiagonal(s);
    const auto a = fl::ap_fit(s, cfg);
    fl::ApConfig shifted = cfg;
    shifted.preference = *cfg.preference - 7.0;
    const auto b = fl::ap_fit(s.array() - 7.0, shifted);
    EXPECT_EQ(a.clustering.labels, b.clustering.labels);
}

TEST(AffinityPropagation, Errors) {
    EXPECT_THROW(fl::ap_fit(fl::Matrix::Zero(2, 3), fl::ApConfig{}), fl::ValidationError);
    fl::ApConfig bad;
    bad.damping = 0.3;
    EXPECT_THROW(fl::ap_fit(fl::Matrix::Zero(2, 2), bad), fl::ConfigError);
}

TEST(AffinityPropagation, NonConvergenceIsNotAnError) {
    auto [x, labels] = blobs({{0, 0}, {3, 0}}, 20, 1.0, 6);
    fl::ApConfig cfg;
    cfg.max_iter = 2;
    cfg.convergence_iter = 15;
    const auto r = fl::ap_fit(fl::similarity_matrix(x), cfg);
    EXPECT_FALSE(r.converged);
    EXPECT_GE(r.clustering.k, 1);
    EXPECT_EQ(r.clustering.labels.size(), 40u);
}

TEST(AffinityPropagation, TunedPreferenceHitsTarget) {
    auto [x, labels] = blobs({{0, 0}, {8, 0}}, 25, 1.0, 14);
    const fl::Matrix s = fl::similarity_matrix(x);
    const double pref = fl::tune_ap_preference(s, 2, fl::ApConfig{});
    fl::ApConfig cfg;
    cfg.preference = pref;
    const auto r = fl::ap_fit(s, cfg);
    EXPECT_EQ(r.clustering.k, 2);
    EXPECT_DOUBLE_EQ(fl::adjusted_rand_index(r.clustering.labels, labels), 1.0);
}

TEST(Protocol, CleanBlobsAgreeFully) {
    auto [x, labels] = blobs({{0, 0, 0}, {20, 20, 20}}, 20, 1.0, 15);
    const auto r = fl::cluster_protocol(x, {}, fl::KMeansConfig{}, fl::ApConfig{});
    EXPECT_DOUBLE_EQ(r.agreement.ari, 1.0);
    EXPECT_NEAR(r.agreement.ami, 1.0, 1e-12);
    EXPECT_NEAR(r.agreement.nmi, 1.0, 1e-12);
    EXPECT_EQ(r.kmeans_sizes, "20+20");
}

TEST(Protocol, SingletonOutlierBreaksAgreement) {
    auto [x, labels] = blobs({{0, 0}, {20, 0}}, 20, 1.0, 16);
    fl::Matrix xo(x.rows() + 1, 2);
    xo << x, Eigen::RowVector2d(10, 60);
    labels.push_back(2);
    // preference that keeps the far outlier as its own exemplar but merges each blob
    fl::ApConfig ap;
    ap.preference = -1200.0;
    ap.damping = 0.7;  // at 0.9 the exemplar set freezes before messages reach the outlier
    const auto r = fl::cluster_protocol(xo, {}, fl::KMeansConfig{}, ap);
    EXPECT_EQ(r.ap.clustering.k, 3);
    EXPECT_LT(r.agreement.ari, 1.0);
    EXPECT_NEAR(r.agreement.ari, oracle::adjusted_rand_index(r.kmeans.clustering.labels, r.ap.clustering.labels).value(),
                1e-12);
    EXPECT_EQ(r.ap_sizes, "20+20+1");
    EXPECT_EQ(std::count(r.kmeans_sizes.begin(), r.kmeans_sizes.end(), '+'), 1);
}

TEST(Protocol, SizesString) {
    const auto c = fl::Clustering::from_labels(std::vector<int>(62, 0), fl::ClusterMethod::kmeans);
    auto labels = std::vector<int>(62, 0);
    labels.insert(labels.end(), 38, 1);
    EXPECT_EQ(fl::Clustering::from_labels(labels, fl::ClusterMethod::kmeans).sizes_string(), "62+38");
    EXPECT_EQ(c.sizes_string(), "62");
}

TEST(Routing, NearestRepresentative) {
    fl::Clustering c = fl::Clustering::from_labels({0, 1}, fl::ClusterMethod::kmeans);
    c.representatives = {{0.0, 0.0}, {3.0, 0.0}};
    EXPECT_EQ(fl::nearest_representative(c, std::vector<double>{1.0, 0.0}), 0);
    EXPECT_EQ(fl::nearest_representative(c, std::vector<double>{2.0, 1.0}), 1);
    // tie goes to the lowest index
    EXPECT_EQ(fl::nearest_representative(c, std::vector<double>{1.5, 0.0}), 0);
    EXPECT_THROW(fl::nearest_representative(fl::Clustering{}, std::vector<double>{1.0}), fl::RoutingError);
}
