#include <gtest/gtest.h>

#include <random>

#include "fluxlattice/evalmetrics.hpp"
#include "fluxlattice/preprocess.hpp"
#include "fluxlattice/synthgen.hpp"

namespace fl = fluxlattice;

namespace {

// Noise floor of every profile of a synthetic set: raw z-scored counts vs their smoothed version.
std::vector<double> noise_floors(const fl::SynthConfig& sc) {
    const auto syn = fl::generate(sc);
    const auto corrected = fl::decay_correct_cycles(syn.dataset, sc.half_life);
    std::vector<double> out;
    for (const auto& p : corrected.profiles) {
        const auto z = fl::zscore(p.values());
        const auto s = fl::savgol_smooth(z, 11, 3);
        out.push_back(fl::noise_floor_nrmse(z, s));
    }
    return out;
}

double mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

}  // namespace

TEST(Nrmse, Examples) {
    const std::vector<double> m{0, 2, 4};
    EXPECT_EQ(fl::nrmse(m, m), 0.0);
    EXPECT_NEAR(fl::nrmse(std::vector<double>{0, 1, 2}, m), 100.0 * std::sqrt(5.0 / 3.0) / 4.0, 1e-12);
    EXPECT_NEAR(fl::nrmse(std::vector<double>{0, 1, 2}, m), 32.2749, 1e-4);
    const std::vector<double> off{0.5, 2.5, 4.5};
    EXPECT_NEAR(fl::nrmse(off, m), 100.0 * 0.5 / 4.0, 1e-12);
}

TEST(Nrmse, SkipsMissingAndRejectsDegenerate) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    EXPECT_NEAR(fl::nrmse(std::vector<double>{1e9, 1, 2}, std::vector<double>{nan, 0, 4}), 100.0 * std::sqrt(2.5) / 4.0,
                1e-12);
    EXPECT_THROW(fl::nrmse(std::vector<double>{1, 2}, std::vector<double>{3, 3}), fl::DegenerateError);
    EXPECT_THROW(fl::nrmse(std::vector<double>{1, 2}, std::vector<double>{3, nan}), fl::InsufficientDataError);
}

TEST(Nrmse, AffineInvariantAndNonNegative) {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> g;
    std::vector<double> a(30), b(30), aa(30), bb(30);
    for (std::size_t i = 0; i < 30; ++i) {
        a[i] = g(rng);
        b[i] = g(rng);
        aa[i] = 3.0 * a[i] + 11.0;
        bb[i] = 3.0 * b[i] + 11.0;
    }
    EXPECT_NEAR(fl::nrmse(aa, bb), fl::nrmse(a, b), 1e-10);
    EXPECT_GT(fl::nrmse(a, b), 0.0);
}

TEST(Nrmse, RegionUsesFullRange) {
    const std::vector<double> meas{0, 1, 2, 3, 4, 10};
    std::vector<double> pred = meas;
    pred[5] = 11.0;
    EXPECT_NEAR(fl::nrmse_region(pred, meas, 4, 6), 100.0 * std::sqrt(0.5) / 10.0, 1e-12);
    EXPECT_THROW(fl::nrmse_region(pred, meas, 4, 7), fl::ValidationError);
}

TEST(BoxStats, SingleValue) {
    const auto b = fl::box_stats(std::vector<double>{3.5});
    EXPECT_EQ(b.median, 3.5);
    EXPECT_EQ(b.q1, 3.5);
    EXPECT_EQ(b.q3, 3.5);
    EXPECT_EQ(b.whisker_low, 3.5);
    EXPECT_EQ(b.whisker_high, 3.5);
    EXPECT_EQ(b.mean, 3.5);
    EXPECT_TRUE(b.outliers.empty());
}

TEST(BoxStats, OneToEight) {
    const auto b = fl::box_stats(std::vector<double>{8, 1, 2, 7, 3, 6, 4, 5});
    EXPECT_DOUBLE_EQ(b.median, 4.5);
    EXPECT_DOUBLE_EQ(b.q1, 2.75);
    EXPECT_DOUBLE_EQ(b.q3, 6.25);
    EXPECT_DOUBLE_EQ(b.whisker_low, 1.0);
    EXPECT_DOUBLE_EQ(b.whisker_high, 8.0);
    EXPECT_DOUBLE_EQ(b.mean, 4.5);
}

TEST(BoxStats, OutlierFlaggedAndMultisetPreserved) {
    const std::vector<double> v{1, 2, 3, 4, 5, 6, 7, 8, 100};
    const auto b = fl::box_stats(v);
    ASSERT_EQ(b.outliers, std::vector<double>{100.0});
    EXPECT_LE(b.whisker_high, b.q3 + 1.5 * (b.q3 - b.q1));
    EXPECT_DOUBLE_EQ(b.whisker_high, 8.0);
    std::size_t inside = 0;
    for (double x : v)
        if (x >= b.whisker_low && x <= b.whisker_high) ++inside;
    EXPECT_EQ(inside + b.outliers.size(), v.size());
    EXPECT_LE(b.q1, b.median);
    EXPECT_LE(b.median, b.q3);
}

TEST(NoiseFloor, ZeroForIdenticalInput) {
    const std::vector<double> v{1, 3, 2, 5};
    EXPECT_EQ(fl::noise_floor_nrmse(v, v), 0.0);
}

TEST(NoiseFloor, DefaultSyntheticBand) {
    fl::SynthConfig sc;
    sc.seed = 21;
    const auto f = noise_floors(sc);
    EXPECT_EQ(f.size(), 200u);
    EXPECT_GE(mean(f), 3.0);
    EXPECT_LE(mean(f), 8.0);
}

TEST(NoiseFloor, PoissonScaling) {
    fl::SynthConfig sc;
    sc.seed = 22;
    sc.missing_rate = 0.0;
    const double base = mean(noise_floors(sc));
    sc.base_intensity *= 2.0;
    const double doubled = mean(noise_floors(sc));
    EXPECT_NEAR(doubled / base, 1.0 / std::sqrt(2.0), 0.15 / std::sqrt(2.0));
}

TEST(Coverage, Extremes) {
    std::vector<fl::UqPrediction> zero, wide;
    std::vector<double> truth;
    for (int i = 0; i < 10; ++i) {
        zero.push_back(fl::UqPrediction::from_moments(0, 0, 0.0, 0.0, "x"));
        wide.push_back(fl::UqPrediction::from_moments(0, 0, 0.0, std::numeric_limits<double>::infinity(), "x"));
        truth.push_back(1.0 + i);
    }
    EXPECT_EQ(fl::ci_coverage(zero, truth), 0.0);
    EXPECT_EQ(fl::ci_coverage(wide, truth), 1.0);
    truth[0] = std::numeric_limits<double>::quiet_NaN();
    EXPECT_EQ(fl::ci_coverage(wide, truth), 1.0);
    EXPECT_THROW(fl::ci_coverage(zero, std::vector<double>{1.0}), fl::ValidationError);
}
