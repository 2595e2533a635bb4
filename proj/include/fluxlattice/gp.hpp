#pragma once
// Exact zero-mean Gaussian Process regression with a squared-exponential
// kernel and heteroscedastic (per-point) observation noise.

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "data_model.hpp"
#include "error.hpp"
#include "evalmetrics.hpp"

namespace fluxlattice {

// Per-feature standardization of the two regression inputs (bank position, axial location).
struct FeatureScaler {
    std::array<double, 2> mean{0.0, 0.0};
    std::array<double, 2> scale{1.0, 1.0};

    static FeatureScaler fit(const Eigen::MatrixXd& raw) {
        FeatureScaler s;
        const double n = static_cast<double>(raw.rows());
        if (raw.rows() < 2) return s;
        for (int c = 0; c < 2; ++c) {
            s.mean[c] = raw.col(c).mean();
            const double var = (raw.col(c).array() - s.mean[c]).square().sum() / n;
            s.scale[c] = var > 0.0 ? std::sqrt(var) : 1.0;
        }
        return s;
    }

    Eigen::MatrixXd transform(const Eigen::MatrixXd& raw) const {
        Eigen::MatrixXd out(raw.rows(), 2);
        for (int c = 0; c < 2; ++c) out.col(c) = (raw.col(c).array() - mean[c]) / scale[c];
        return out;
    }

    bool operator==(const FeatureScaler&) const = default;
};

struct GpHyperparams {
    double sigma_f = 1.0;       // signal amplitude
    double length_scale = 0.3;  // shared by both standardized inputs
    double jitter = 0.0;        // added to the diagonal; > 0 also enables escalation on failure

    void validate() const {
        if (!(sigma_f > 0.0)) throw ConfigError("GP sigma_f must be > 0");
        if (!(length_scale > 0.0)) throw ConfigError("GP length_scale must be > 0");
        if (!(jitter >= 0.0)) throw ConfigError("GP jitter must be >= 0");
    }
    bool operator==(const GpHyperparams&) const = default;
};

inline double kernel(const Eigen::Ref<const Eigen::RowVectorXd>& a, const Eigen::Ref<const Eigen::RowVectorXd>& b,
                     const GpHyperparams& hp) {
    const double d2 = (a - b).squaredNorm();
    return hp.sigma_f * hp.sigma_f * std::exp(-d2 / (2.0 * hp.length_scale * hp.length_scale));
}

inline Eigen::MatrixXd kernel_matrix(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, const GpHyperparams& hp) {
    const double sf2 = hp.sigma_f * hp.sigma_f;
    const double inv = 1.0 / (2.0 * hp.length_scale * hp.length_scale);
    Eigen::MatrixXd k(a.rows(), b.rows());
    for (Eigen::Index j = 0; j < b.rows(); ++j)
        for (Eigen::Index i = 0; i < a.rows(); ++i) {
            const double dx = a(i, 0) - b(j, 0);
            double d2 = dx * dx;
            for (Eigen::Index c = 1; c < a.cols(); ++c) d2 += (a(i, c) - b(j, c)) * (a(i, c) - b(j, c));
            k(i, j) = sf2 * std::exp(-d2 * inv);
        }
    return k;
}

struct GpModel {
    Eigen::MatrixXd x_train;  // N x 2, standardized inputs
    Eigen::VectorXd y_train;
    Eigen::VectorXd noise_sd;
    GpHyperparams hyperparams;
    double applied_jitter = 0.0;  // jitter actually used (>= hyperparams.jitter)
    Eigen::MatrixXd chol;         // lower factor of K + diag(noise^2) + jitter I
    Eigen::VectorXd alpha;        // (K + Sigma)^-1 y
    FeatureScaler scaler;         // raw inputs -> x_train space
    std::string model_tag = "gp";

    Eigen::Index size() const { return x_train.rows(); }
};

namespace detail {

inline bool try_factor(const Eigen::MatrixXd& k, double jitter, Eigen::MatrixXd& chol) {
    Eigen::MatrixXd reg = k;
    reg.diagonal().array() += jitter;
    Eigen::LLT<Eigen::MatrixXd> llt(reg);
    if (llt.info() != Eigen::Success) return false;
    chol = llt.matrixL();
    const double max_diag = reg.diagonal().maxCoeff();
    const double min_pivot = chol.diagonal().array().square().minCoeff();
    return min_pivot > 1e-15 * max_diag;
}

inline Eigen::MatrixXd noisy_gram(const GpModel& m) {
    Eigen::MatrixXd k = kernel_matrix(m.x_train, m.x_train, m.hyperparams);
    k.diagonal().array() += m.noise_sd.array().square();
    return k;
}

inline void solve_alpha(GpModel& m) {
    m.alpha = m.chol.triangularView<Eigen::Lower>().solve(m.y_train);
    m.chol.triangularView<Eigen::Lower>().transpose().solveInPlace(m.alpha);
}

}  // namespace detail

// Factorizes K + diag(noise_sd^2) + jitter I. With jitter > 0 a failed
// factorization is retried with jitter raised tenfold from 1e-10 up to 1e-6.
inline GpModel gp_fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const Eigen::VectorXd& noise_sd,
                      const GpHyperparams& hp, const FeatureScaler& scaler = {}) {
    hp.validate();
    if (x.rows() != y.size() || noise_sd.size() != y.size())
        throw ValidationError("gp_fit: inputs, targets and noise differ in length");
    if (x.rows() > 0 && x.cols() != 2) throw ValidationError("gp_fit: inputs must have 2 columns");
    if (!x.allFinite() || !y.allFinite() || !noise_sd.allFinite())
        throw ValidationError("gp_fit: non-finite training data");
    if ((noise_sd.array() < 0.0).any()) throw ValidationError("gp_fit: negative noise standard deviation");

    GpModel m;
    m.x_train = x.rows() > 0 ? x : Eigen::MatrixXd(0, 2);
    m.y_train = y;
    m.noise_sd = noise_sd;
    m.hyperparams = hp;
    m.scaler = scaler;
    if (x.rows() == 0) {
        m.chol.resize(0, 0);
        m.alpha.resize(0);
        return m;
    }
    const Eigen::MatrixXd k = detail::noisy_gram(m);

    std::vector<double> ladder{hp.jitter};
    if (hp.jitter > 0.0)
        for (double j = 1e-10; j <= 1e-6 * 1.0000001; j *= 10.0)
            if (j > hp.jitter) ladder.push_back(j);
    bool ok = false;
    for (double j : ladder)
        if (detail::try_factor(k, j, m.chol)) {
            m.applied_jitter = j;
            ok = true;
            break;
        }
    if (!ok)
        throw ConditioningError("covariance matrix not positive definite (last jitter " +
                                text::format_double(ladder.back()) + ")");
    detail::solve_alpha(m);
    return m;
}

// Rebuilds the factor and weights of a model whose training data,
// hyperparameters and applied jitter are already set.
inline void gp_refactor(GpModel& m) {
    if (m.size() == 0) {
        m.chol.resize(0, 0);
        m.alpha.resize(0);
        return;
    }
    if (!detail::try_factor(detail::noisy_gram(m), m.applied_jitter, m.chol))
        throw ConditioningError("stored GP model no longer factorizes");
    detail::solve_alpha(m);
}

struct GpPrediction {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
};

// Posterior over noise-free values at standardized inputs `x_star`; with
// include_noise the query noise variances are added to the diagonal.
inline GpPrediction gp_predict(const GpModel& m, const Eigen::MatrixXd& x_star, bool include_noise = false,
                               const Eigen::VectorXd& noise_sd_star = {}) {
    if (x_star.rows() > 0 && x_star.cols() != 2) throw ValidationError("gp_predict: queries must have 2 columns");
    if (include_noise && noise_sd_star.size() != x_star.rows())
        throw ValidationError("gp_predict: one query noise value per query point required");
    GpPrediction p;
    const Eigen::Index mq = x_star.rows();
    p.cov = kernel_matrix(x_star, x_star, m.hyperparams);
    if (m.size() == 0) {
        p.mean = Eigen::VectorXd::Zero(mq);
    } else {
        const Eigen::MatrixXd ks = kernel_matrix(m.x_train, x_star, m.hyperparams);
        p.mean = ks.transpose() * m.alpha;
        const Eigen::MatrixXd v = m.chol.triangularView<Eigen::Lower>().solve(ks);
        p.cov.noalias() -= v.transpose() * v;
    }
    p.cov = 0.5 * (p.cov + p.cov.transpose()).eval();
    if (include_noise) p.cov.diagonal().array() += noise_sd_star.array().square();
    for (Eigen::Index i = 0; i < mq; ++i) p.cov(i, i) = std::max(p.cov(i, i), 0.0);
    return p;
}

// Predictions along one axial profile at a raw (unstandardized) bank position.
inline std::vector<UqPrediction> gp_predict_profile(const GpModel& m, double bank_position,
                                                    std::span<const double> axial_grid, bool include_noise,
                                                    std::span<const double> noise_sd_star = {}) {
    Eigen::MatrixXd raw(static_cast<Eigen::Index>(axial_grid.size()), 2);
    for (std::size_t i = 0; i < axial_grid.size(); ++i) {
        raw(static_cast<Eigen::Index>(i), 0) = bank_position;
        raw(static_cast<Eigen::Index>(i), 1) = axial_grid[i];
    }
    Eigen::VectorXd noise = Eigen::VectorXd::Zero(raw.rows());
    if (include_noise) {
        if (noise_sd_star.size() != axial_grid.size())
            throw ValidationError("gp_predict_profile: one noise value per axial point required");
        for (std::size_t i = 0; i < noise_sd_star.size(); ++i) noise(static_cast<Eigen::Index>(i)) = noise_sd_star[i];
    }
    const GpPrediction p = gp_predict(m, m.scaler.transform(raw), include_noise, noise);
    std::vector<UqPrediction> out;
    out.reserve(axial_grid.size());
    for (std::size_t i = 0; i < axial_grid.size(); ++i) {
        const auto ii = static_cast<Eigen::Index>(i);
        out.push_back(UqPrediction::from_moments(bank_position, axial_grid[i], p.mean(ii), std::sqrt(p.cov(ii, ii)),
                                                 m.model_tag));
    }
    return out;
}

struct GpGridResult {
    GpHyperparams best;
    double best_score = 0.0;  // validation NRMSE, percent
};

// Manual-tuning helper: fits every (sigma_f, length_scale) pair and keeps the
// one with the lowest NRMSE on the validation set.
inline GpGridResult gp_grid_search(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const Eigen::VectorXd& noise_sd,
                                   const Eigen::MatrixXd& x_val, const Eigen::VectorXd& y_val,
                                   std::span<const double> sigma_f_grid, std::span<const double> length_grid,
                                   double jitter = 1e-8) {
    if (sigma_f_grid.empty() || length_grid.empty()) throw ConfigError("GP grid search needs non-empty grids");
    GpGridResult r;
    r.best_score = std::numeric_limits<double>::infinity();
    for (double sf : sigma_f_grid)
        for (double l : length_grid) {
            const GpHyperparams hp{sf, l, jitter};
            const GpModel m = gp_fit(x, y, noise_sd, hp);
            const Eigen::VectorXd mean = gp_predict(m, x_val).mean;
            const double score = nrmse(std::span(mean.data(), static_cast<std::size_t>(mean.size())),
                                       std::span(y_val.data(), static_cast<std::size_t>(y_val.size())));
            if (score < r.best_score) {
                r.best_score = score;
                r.best = hp;
            }
        }
    return r;
}

}  // namespace fluxlattice
