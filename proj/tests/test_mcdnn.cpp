#include <gtest/gtest.h>

#include <random>

#include "fluxlattice/mcdnn.hpp"

namespace fl = fluxlattice;

namespace {

fl::MlpModel random_model(std::vector<int> hidden, double p, double lambda, std::uint64_t seed) {
    fl::MlpConfig cfg;
    cfg.hidden_sizes = std::move(hidden);
    cfg.dropout_p = p;
    cfg.weight_decay = lambda;
    cfg.seed = seed;
    fl::MlpModel m = fl::mlp_init(cfg);
    std::mt19937_64 rng(seed + 100);
    std::normal_distribution<double> g(0.0, 0.3);
    for (auto& b : m.biases)
        for (Eigen::Index i = 0; i < b.size(); ++i) b(i) = g(rng);
    return m;
}

double relative_error(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6}); }

}  // namespace

TEST(Forward, ZeroModelOutputsZero) {
    fl::MlpModel m = fl::mlp_init(fl::MlpConfig{});
    for (auto& w : m.weights) w.setZero();
    for (auto& b : m.biases) b.setZero();
    const double x[2] = {3.0, -7.0};
    EXPECT_EQ(fl::forward(m, x), 0.0);
}

TEST(Forward, HandSetSingleUnit) {
    fl::MlpModel m;
    m.config.hidden_sizes = {1};
    m.weights = {Eigen::MatrixXd::Ones(1, 2), Eigen::MatrixXd::Constant(1, 1, 2.0)};
    m.biases = {Eigen::VectorXd::Zero(1), Eigen::VectorXd::Ones(1)};
    m.validate();
    const double x[2] = {1.0, 1.0};
    EXPECT_EQ(fl::forward(m, x), 5.0);
}

TEST(Forward, ZeroDropoutWithMaskSourceIsDeterministic) {
    const auto m = random_model({8, 8}, 0.0, 0.0, 3);
    const double x[2] = {0.4, -1.2};
    fl::Rng rng(5);
    EXPECT_EQ(fl::forward(m, x, &rng), fl::forward(m, x));
}

TEST(Forward, InvertedDropoutPreservesMeanActivation) {
    fl::MlpModel m;
    m.config.hidden_sizes = {1};
    m.config.dropout_p = 0.25;
    m.weights = {Eigen::MatrixXd::Ones(1, 2), Eigen::MatrixXd::Ones(1, 1)};
    m.biases = {Eigen::VectorXd::Zero(1), Eigen::VectorXd::Zero(1)};
    const double x[2] = {1.0, 1.0};
    fl::Rng rng(9);
    double sum = 0.0;
    int kept = 0;
    for (int i = 0; i < 40000; ++i) {
        const double y = fl::forward(m, x, &rng);
        if (y != 0.0) {
            EXPECT_NEAR(y, 2.0 / 0.75, 1e-12);
            ++kept;
        }
        sum += y;
    }
    EXPECT_NEAR(kept / 40000.0, 0.75, 0.01);
    EXPECT_NEAR(sum / 40000.0, 2.0, 0.03);
}

TEST(Loss, PerfectPredictions) {
    fl::MlpModel m;
    m.config.hidden_sizes = {1};
    m.config.dropout_p = 0.2;
    m.config.weight_decay = 0.0;
    m.weights = {Eigen::MatrixXd::Ones(1, 2), Eigen::MatrixXd::Constant(1, 1, 2.0)};
    m.biases = {Eigen::VectorXd::Zero(1), Eigen::VectorXd::Ones(1)};
    Eigen::MatrixXd x(2, 2);
    x << 1, 1, 2, 0.5;
    const Eigen::Vector2d y(5.0, 6.0);
    EXPECT_EQ(fl::loss(m, x, y), 0.0);
    m.config.weight_decay = 0.01;
    // lambda * (p * (1 + 1 + 4) + (0 + 1))
    const double expect = 0.01 * (0.2 * 6.0 + 1.0);
    EXPECT_NEAR(fl::loss(m, x, y), expect, 1e-16);
    EXPECT_NEAR(fl::regularization(m), expect, 1e-16);
}

TEST(Loss, RegularizationTermsSeparately) {
    const auto m = random_model({5, 4}, 0.3, 0.05, 7);
    double w = 0.0, b = 0.0;
    for (std::size_t l = 0; l < m.layers(); ++l) {
        for (Eigen::Index i = 0; i < m.weights[l].size(); ++i) w += m.weights[l].data()[i] * m.weights[l].data()[i];
        for (Eigen::Index i = 0; i < m.biases[l].size(); ++i) b += m.biases[l](i) * m.biases[l](i);
    }
    EXPECT_NEAR(fl::regularization(m), 0.05 * (0.3 * w + b), 1e-13);
    Eigen::MatrixXd x = Eigen::MatrixXd::Random(10, 2);
    EXPECT_GE(fl::loss(m, x, Eigen::VectorXd::Random(10)), 0.0);
}

TEST(Gradient, MatchesCentralDifferences) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        fl::MlpModel m = random_model({6, 5}, 0.2, 0.01, seed);
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> g;
        Eigen::MatrixXd x(12, 2);
        Eigen::VectorXd y(12);
        for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = g(rng);
        for (Eigen::Index i = 0; i < y.size(); ++i) y(i) = g(rng);
        fl::Rng mrng(seed);
        const auto masks = fl::sample_masks(m, 12, 0.2, mrng);
        fl::MlpGradient grad;
        fl::loss_and_gradient(m, x, y, &masks, grad);
        const double h = 1e-5;
        for (std::size_t l = 0; l < m.layers(); ++l) {
            for (Eigen::Index i = 0; i < m.weights[l].size(); ++i) {
                double& w = m.weights[l].data()[i];
                const double keep = w;
                w = keep + h;
                const double up = fl::loss(m, x, y, &masks);
                w = keep - h;
                const double dn = fl::loss(m, x, y, &masks);
                w = keep;
                EXPECT_LT(relative_error(grad.d_weights[l].data()[i], (up - dn) / (2 * h)), 1e-4);
            }
            for (Eigen::Index i = 0; i < m.biases[l].size(); ++i) {
                double& b = m.biases[l](i);
                const double keep = b;
                b = keep + h;
                const double up = fl::loss(m, x, y, &masks);
                b = keep - h;
                const double dn = fl::loss(m, x, y, &masks);
                b = keep;
                EXPECT_LT(relative_error(grad.d_biases[l](i), (up - dn) / (2 * h)), 1e-4);
            }
        }
    }
}

TEST(Split, FractionsFor400) {
    fl::Rng rng(1);
    const auto s = fl::split_indices(400, rng);
    EXPECT_EQ(s.train.size(), 323u);
    EXPECT_EQ(s.validation.size(), 57u);
    EXPECT_EQ(s.test.size(), 20u);
    std::vector<std::size_t> all = s.train;
    all.insert(all.end(), s.validation.begin(), s.validation.end());
    all.insert(all.end(), s.test.begin(), s.test.end());
    std::sort(all.begin(), all.end());
    for (std::size_t i = 0; i < all.size(); ++i) EXPECT_EQ(all[i], i);
}

TEST(Train, LinearTargetFit) {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Eigen::MatrixXd x(1000, 2);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = u(rng);
    const Eigen::VectorXd y = x.col(0);
    fl::MlpConfig cfg;
    cfg.hidden_sizes = {32, 32};
    cfg.dropout_p = 0.0;
    cfg.weight_decay = 0.0;
    cfg.epochs = 200;
    cfg.seed = 4;
    const auto t = fl::train(x, y, cfg);
    EXPECT_LT(std::sqrt(t.history.validation_loss.back()), 0.02);
    EXPECT_EQ(t.history.train_loss.size(), 200u);
    // a learnable target: loss drops by at least 10x
    EXPECT_LT(t.history.train_loss.back(), t.history.train_loss.front() / 10.0);
}

TEST(Train, SameSeedSameWeights) {
    Eigen::MatrixXd x = Eigen::MatrixXd::Random(300, 2);
    const Eigen::VectorXd y = (x.col(0).array() * x.col(1).array()).matrix();
    fl::MlpConfig cfg;
    cfg.hidden_sizes = {16, 16};
    cfg.epochs = 5;
    cfg.seed = 77;
    const auto a = fl::train(x, y, cfg), b = fl::train(x, y, cfg);
    for (std::size_t l = 0; l < a.model.layers(); ++l) {
        EXPECT_EQ(a.model.weights[l], b.model.weights[l]);
        EXPECT_EQ(a.model.biases[l], b.model.biases[l]);
    }
    cfg.seed = 78;
    const auto c = fl::train(x, y, cfg);
    EXPECT_NE(a.model.weights[0], c.model.weights[0]);
}

TEST(Train, Errors) {
    Eigen::MatrixXd x = Eigen::MatrixXd::Random(20, 2);
    fl::MlpConfig cfg;
    EXPECT_THROW(fl::train(x, Eigen::VectorXd::Zero(20), cfg), fl::InsufficientDataError);
    cfg.batch_size = 4;
    cfg.learning_rate = 1e300;
    cfg.epochs = 3;
    Eigen::MatrixXd big = Eigen::MatrixXd::Random(200, 2) * 1e3;
    try {
        fl::train(big, Eigen::VectorXd::Constant(200, 1e3), cfg);
        FAIL() << "expected divergence";
    } catch (const fl::TrainingError& e) {
        EXPECT_GE(e.epoch(), 1);
    }
}

TEST(McPredict, ZeroDropoutIsDeterministic) {
    const auto m = random_model({16, 16}, 0.0, 0.0, 5);
    const double x[2] = {0.3, 0.9};
    const auto p = fl::mc_predict(m, x, 100, 42);
    EXPECT_EQ(p.std, 0.0);
    EXPECT_NEAR(p.mean, fl::forward(m, x), 1e-12);
}

TEST(McPredict, SummaryOfFixedPasses) {
    const std::vector<double> passes{1.0, 2.0, 3.0};
    const auto p = fl::mc_summarize(passes, 0.5, 0.1, "mlp");
    EXPECT_DOUBLE_EQ(p.mean, 2.0);
    EXPECT_DOUBLE_EQ(p.std, 1.0);
    EXPECT_DOUBLE_EQ(p.ci95_low, 2.0 - 1.96);
    EXPECT_THROW(fl::mc_summarize(std::vector<double>{1.0}, 0, 0, "mlp"), fl::ConfigError);
}

TEST(McPredict, SameSeedSameResultAndJobsIndependent) {
    const auto m = random_model({16, 16}, 0.2, 0.0, 6);
    Eigen::MatrixXd x = Eigen::MatrixXd::Random(7, 2);
    const auto a = fl::mc_passes(m, x, 200, 9, 1);
    const auto b = fl::mc_passes(m, x, 200, 9, 3);
    EXPECT_EQ(a, b);
    const double q[2] = {x(0, 0), x(0, 1)};
    const auto single = fl::mc_predict(m, q, 200, 9);
    EXPECT_NEAR(single.mean, fl::mc_passes(m, x.topRows(1), 200, 9).mean(), 1e-12);
}

TEST(McPredict, StdEstimateConvergesWithPasses) {
    const auto m = random_model({16, 16}, 0.2, 0.0, 8);
    const double x[2] = {0.5, -0.5};
    double diff_small = 0.0, diff_large = 0.0;
    for (std::uint64_t s = 0; s < 50; ++s) {
        const double s100 = fl::mc_predict(m, x, 100, s).std, s200 = fl::mc_predict(m, x, 200, s + 1000).std;
        const double s800 = fl::mc_predict(m, x, 800, s + 2000).std, s1600 = fl::mc_predict(m, x, 1600, s + 3000).std;
        diff_small += std::abs(s200 - s100);
        diff_large += std::abs(s1600 - s800);
    }
    EXPECT_LT(diff_large, diff_small);
}

TEST(Model, DimensionsValidated) {
    fl::MlpModel m = fl::mlp_init(fl::MlpConfig{});
    EXPECT_NO_THROW(m.validate());
    EXPECT_EQ(m.layers(), 4u);
    m.weights[1] = Eigen::MatrixXd::Zero(64, 3);
    EXPECT_THROW(m.validate(), fl::ValidationError);
    fl::MlpConfig bad;
    bad.dropout_p = 1.0;
    EXPECT_THROW(bad.validate(), fl::ConfigError);
}
