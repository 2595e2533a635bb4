#pragma once
// Fully connected ReLU regressor (2 inputs -> hidden layers -> 1 output)
// trained with Adam on the dropout-regularized squared loss; dropout stays
// active at inference to produce Monte Carlo predictive moments.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "data_model.hpp"
#include "error.hpp"
#include "gp.hpp"
#include "parallel.hpp"
#include "rng.hpp"

namespace fluxlattice {

struct MlpConfig {
    std::vector<int> hidden_sizes{64, 64, 64};
    double dropout_p = 0.1;
    double weight_decay = 1e-5;
    double learning_rate = 1e-3;
    int epochs = 100;
    int batch_size = 64;
    std::uint64_t seed = 0;
    int mc_passes = 2000;

    void validate() const {
        if (hidden_sizes.empty()) throw ConfigError("MLP needs at least one hidden layer");
        for (int h : hidden_sizes)
            if (h < 1) throw ConfigError("MLP hidden layer sizes must be >= 1");
        if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw ConfigError("dropout_p must lie in [0, 1)");
        if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
        if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
        if (epochs < 1) throw ConfigError("epochs must be >= 1");
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
        if (mc_passes < 2) throw ConfigError("mc_passes must be >= 2");
    }
    bool operator==(const MlpConfig&) const = default;
};

struct MlpModel {
    std::vector<Eigen::MatrixXd> weights;  // layer l: out x in
    std::vector<Eigen::VectorXd> biases;
    MlpConfig config;
    FeatureScaler scaler;  // raw inputs -> network inputs
    std::string model_tag = "mlp";

    std::size_t layers() const { return weights.size(); }

    void validate() const {
        if (weights.empty() || weights.size() != biases.size()) throw ValidationError("MLP has no layers");
        Eigen::Index in = 2;
        for (std::size_t l = 0; l < weights.size(); ++l) {
            if (weights[l].cols() != in || biases[l].size() != weights[l].rows())
                throw ValidationError("MLP layer dimensions do not chain");
            in = weights[l].rows();
        }
        if (in != 1) throw ValidationError("MLP must end in a single output");
    }
};

// He-style fan-in scaled Gaussian weights, zero biases.
inline MlpModel mlp_init(const MlpConfig& cfg) {
    cfg.validate();
    MlpModel m;
    m.config = cfg;
    Rng rng = make_rng(cfg.seed, {0x696e6974ULL});
    std::normal_distribution<double> gauss(0.0, 1.0);
    int in = 2;
    std::vector<int> sizes = cfg.hidden_sizes;
    sizes.push_back(1);
    for (int out : sizes) {
        Eigen::MatrixXd w(out, in);
        const double sd = std::sqrt(2.0 / in);
        for (Eigen::Index j = 0; j < w.cols(); ++j)
            for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = sd * gauss(rng);
        m.weights.push_back(std::move(w));
        m.biases.push_back(Eigen::VectorXd::Zero(out));
        in = out;
    }
    return m;
}

// Inverted-dropout masks for the hidden layers: entries are 0 (dropped) or
// 1/(1-p) (kept), one column per sample.
struct DropoutMasks {
    std::vector<Eigen::MatrixXd> hidden;
    bool empty() const { return hidden.empty(); }
};

inline DropoutMasks sample_masks(const MlpModel& m, Eigen::Index batch, double p, Rng& rng) {
    DropoutMasks masks;
    const double keep_scale = 1.0 / (1.0 - p);
    // a 32-bit uniform per unit; drop when below p * 2^32
    const auto threshold = static_cast<std::uint64_t>(std::ldexp(p, 32));
    for (std::size_t l = 0; l + 1 < m.layers(); ++l) {
        Eigen::MatrixXd mask(m.weights[l].rows(), batch);
        double* d = mask.data();
        const Eigen::Index n = mask.size();
        for (Eigen::Index i = 0; i < n; i += 2) {
            const std::uint64_t r = rng();
            d[i] = (r & 0xffffffffULL) < threshold ? 0.0 : keep_scale;
            if (i + 1 < n) d[i + 1] = (r >> 32) < threshold ? 0.0 : keep_scale;
        }
        masks.hidden.push_back(std::move(mask));
    }
    return masks;
}

namespace detail {

struct ForwardCache {
    std::vector<Eigen::MatrixXd> pre;   // z_l for hidden layers
    std::vector<Eigen::MatrixXd> act;   // a_0 = inputs, a_l after relu and mask
    Eigen::RowVectorXd output;
};

// inputs: 2 x B (one column per sample)
inline void forward_cached(const MlpModel& m, const Eigen::MatrixXd& inputs, const DropoutMasks* masks,
                           ForwardCache& cache) {
    cache.pre.clear();
    cache.act.clear();
    cache.act.push_back(inputs);
    const std::size_t hidden = m.layers() - 1;
    for (std::size_t l = 0; l < hidden; ++l) {
        Eigen::MatrixXd z = m.weights[l] * cache.act.back();
        z.colwise() += m.biases[l];
        Eigen::MatrixXd a = z.cwiseMax(0.0);
        if (masks && !masks->empty()) a.array() *= masks->hidden[l].array();
        cache.pre.push_back(std::move(z));
        cache.act.push_back(std::move(a));
    }
    Eigen::MatrixXd out = m.weights.back() * cache.act.back();
    out.colwise() += m.biases.back();
    cache.output = out.row(0);
}

inline Eigen::MatrixXd to_columns(const Eigen::MatrixXd& rows_by_sample) {
    if (rows_by_sample.cols() != 2) throw ValidationError("MLP inputs must have 2 columns");
    return rows_by_sample.transpose();
}

}  // namespace detail

// Batched forward pass on network inputs (B x 2). Without masks the pass is deterministic.
inline Eigen::VectorXd forward_batch(const MlpModel& m, const Eigen::MatrixXd& x, const DropoutMasks* masks = nullptr) {
    detail::ForwardCache cache;
    detail::forward_cached(m, detail::to_columns(x), masks, cache);
    return cache.output.transpose();
}

// Single-sample pass; with a mask source each hidden unit is kept with probability 1-p.
inline double forward(const MlpModel& m, std::span<const double, 2> x, Rng* mask_source = nullptr) {
    Eigen::MatrixXd in(2, 1);
    in << x[0], x[1];
    detail::ForwardCache cache;
    if (mask_source) {
        const DropoutMasks masks = sample_masks(m, 1, m.config.dropout_p, *mask_source);
        detail::forward_cached(m, in, &masks, cache);
    } else {
        detail::forward_cached(m, in, nullptr, cache);
    }
    return cache.output(0);
}

inline double regularization(const MlpModel& m) {
    double r = 0.0;
    for (std::size_t l = 0; l < m.layers(); ++l)
        r += m.config.dropout_p * m.weights[l].squaredNorm() + m.biases[l].squaredNorm();
    return m.config.weight_decay * r;
}

// mean squared error over the batch + lambda * sum_l (p ||W_l||^2 + ||b_l||^2)
inline double loss(const MlpModel& m, const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                   const DropoutMasks* masks = nullptr) {
    if (x.rows() == 0 || x.rows() != y.size()) throw ValidationError("loss needs a non-empty, aligned batch");
    const Eigen::VectorXd pred = forward_batch(m, x, masks);
    return (pred - y).squaredNorm() / static_cast<double>(y.size()) + regularization(m);
}

struct MlpGradient {
    std::vector<Eigen::MatrixXd> d_weights;
    std::vector<Eigen::VectorXd> d_biases;
};

inline double loss_and_gradient(const MlpModel& m, const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                                const DropoutMasks* masks, MlpGradient& grad) {
    if (x.rows() == 0 || x.rows() != y.size()) throw ValidationError("loss needs a non-empty, aligned batch");
    detail::ForwardCache cache;
    detail::forward_cached(m, detail::to_columns(x), masks, cache);
    const double b = static_cast<double>(y.size());
    const Eigen::RowVectorXd resid = cache.output - y.transpose();
    const double lambda = m.config.weight_decay, p = m.config.dropout_p;

    const std::size_t layers = m.layers();
    grad.d_weights.resize(layers);
    grad.d_biases.resize(layers);
    Eigen::MatrixXd delta = (2.0 / b) * resid;  // 1 x B
    for (std::size_t li = layers; li-- > 0;) {
        grad.d_weights[li] = delta * cache.act[li].transpose() + 2.0 * lambda * p * m.weights[li];
        grad.d_biases[li] = delta.rowwise().sum() + 2.0 * lambda * m.biases[li];
        if (li == 0) break;
        Eigen::MatrixXd da = m.weights[li].transpose() * delta;
        if (masks && !masks->empty()) da.array() *= masks->hidden[li - 1].array();
        delta = (cache.pre[li - 1].array() > 0.0).select(da, 0.0);
    }
    return resid.squaredNorm() / b + regularization(m);
}

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------

struct DataSplit {
    std::vector<std::size_t> train, validation, test;
};

// Random split: floor(5%) test, floor(14.25%) validation, remainder train.
inline DataSplit split_indices(std::size_t n, Rng& rng) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::shuffle(idx.begin(), idx.end(), rng);
    const std::size_t n_test = n * 5 / 100;
    const std::size_t n_val = n * 1425 / 10000;
    DataSplit s;
    s.test.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_test));
    s.validation.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_test),
                        idx.begin() + static_cast<std::ptrdiff_t>(n_test + n_val));
    s.train.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_test + n_val), idx.end());
    return s;
}

struct TrainingHistory {
    std::vector<double> train_loss;       // mean minibatch loss per epoch (dropout active)
    std::vector<double> validation_loss;  // deterministic MSE on the validation set
    double test_mse = 0.0;
    std::size_t n_train = 0, n_validation = 0, n_test = 0;
};

struct TrainedMlp {
    MlpModel model;
    TrainingHistory history;
};

namespace detail {
inline Eigen::MatrixXd gather_rows(const Eigen::MatrixXd& x, std::span<const std::size_t> idx) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), x.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(idx[i]));
    return out;
}
inline Eigen::VectorXd gather(const Eigen::VectorXd& y, std::span<const std::size_t> idx) {
    Eigen::VectorXd out(static_cast<Eigen::Index>(idx.size()));
    for (std::size_t i = 0; i < idx.size(); ++i) out(static_cast<Eigen::Index>(i)) = y(static_cast<Eigen::Index>(idx[i]));
    return out;
}
inline double mse(const MlpModel& m, const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
    if (x.rows() == 0) return 0.0;
    return (forward_batch(m, x) - y).squaredNorm() / static_cast<double>(y.size());
}
}  // namespace detail

// Trains on network-space inputs x (N x 2) and targets y with Adam.
inline TrainedMlp train(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const MlpConfig& cfg,
                        const FeatureScaler& scaler = {}) {
    cfg.validate();
    if (x.rows() != y.size()) throw ValidationError("train: inputs and targets differ in length");
    if (!x.allFinite() || !y.allFinite()) throw ValidationError("train: non-finite training data");
    Rng split_rng = make_rng(cfg.seed, {0x73706c6974ULL});
    const DataSplit split = split_indices(static_cast<std::size_t>(x.rows()), split_rng);
    if (split.train.size() < static_cast<std::size_t>(cfg.batch_size))
        throw InsufficientDataError("training split has " + std::to_string(split.train.size()) +
                                    " points, fewer than one batch of " + std::to_string(cfg.batch_size));

    TrainedMlp out;
    out.model = mlp_init(cfg);
    out.model.scaler = scaler;
    MlpModel& m = out.model;
    const Eigen::MatrixXd x_val = detail::gather_rows(x, split.validation);
    const Eigen::VectorXd y_val = detail::gather(y, split.validation);

    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    std::vector<Eigen::MatrixXd> mw, vw;
    std::vector<Eigen::VectorXd> mb, vb;
    for (std::size_t l = 0; l < m.layers(); ++l) {
        mw.push_back(Eigen::MatrixXd::Zero(m.weights[l].rows(), m.weights[l].cols()));
        vw.push_back(mw.back());
        mb.push_back(Eigen::VectorXd::Zero(m.biases[l].size()));
        vb.push_back(mb.back());
    }
    Rng shuffle_rng = make_rng(cfg.seed, {0x73687566ULL});
    Rng mask_rng = make_rng(cfg.seed, {0x6d61736bULL});
    std::vector<std::size_t> order = split.train;
    MlpGradient g;
    long step = 0;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        double epoch_loss = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            const std::span<const std::size_t> idx(order.data() + start, end - start);
            const Eigen::MatrixXd xb = detail::gather_rows(x, idx);
            const Eigen::VectorXd yb = detail::gather(y, idx);
            const DropoutMasks masks = sample_masks(m, xb.rows(), cfg.dropout_p, mask_rng);
            const double l = loss_and_gradient(m, xb, yb, &masks, g);
            if (!std::isfinite(l)) throw TrainingError(epoch, "non-finite loss");
            epoch_loss += l;
            ++batches;
            ++step;
            const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
            const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
            const double lr = cfg.learning_rate * std::sqrt(c2) / c1;
            for (std::size_t li = 0; li < m.layers(); ++li) {
                mw[li] = beta1 * mw[li] + (1.0 - beta1) * g.d_weights[li];
                vw[li] = beta2 * vw[li] + (1.0 - beta2) * g.d_weights[li].cwiseAbs2();
                m.weights[li].array() -= lr * mw[li].array() / (vw[li].array().sqrt() + eps);
                mb[li] = beta1 * mb[li] + (1.0 - beta1) * g.d_biases[li];
                vb[li] = beta2 * vb[li] + (1.0 - beta2) * g.d_biases[li].cwiseAbs2();
                m.biases[li].array() -= lr * mb[li].array() / (vb[li].array().sqrt() + eps);
            }
        }
        const double mean_loss = epoch_loss / static_cast<double>(batches);
        const double val = detail::mse(m, x_val, y_val);
        if (!std::isfinite(mean_loss) || !std::isfinite(val)) throw TrainingError(epoch, "non-finite loss");
        out.history.train_loss.push_back(mean_loss);
        out.history.validation_loss.push_back(val);
    }
    out.history.test_mse = detail::mse(m, detail::gather_rows(x, split.test), detail::gather(y, split.test));
    out.history.n_train = split.train.size();
    out.history.n_validation = split.validation.size();
    out.history.n_test = split.test.size();
    return out;
}

// ---------------------------------------------------------------------------
// Monte Carlo dropout inference
// ---------------------------------------------------------------------------

// Sample mean and (T-1)-normalized standard deviation of T stochastic passes.
inline UqPrediction mc_summarize(std::span<const double> passes, double bank, double axial, std::string tag) {
    if (passes.size() < 2) throw ConfigError("Monte Carlo summary needs at least 2 passes");
    double mean = 0.0, m2 = 0.0;
    std::size_t n = 0;
    for (double v : passes) {
        ++n;
        const double d = v - mean;
        mean += d / static_cast<double>(n);
        m2 += d * (v - mean);
    }
    const double var = m2 / static_cast<double>(n - 1);
    return UqPrediction::from_moments(bank, axial, mean, std::sqrt(std::max(var, 0.0)), std::move(tag));
}

// T x M matrix of stochastic outputs at network inputs x (M x 2). Pass t
// draws its masks from a stream derived from (seed, t) only.
inline Eigen::MatrixXd mc_passes(const MlpModel& m, const Eigen::MatrixXd& x, int passes, std::uint64_t seed,
                                 int jobs = 1) {
    if (passes < 2) throw ConfigError("mc_predict needs T >= 2");
    const Eigen::MatrixXd cols = detail::to_columns(x);
    const Eigen::Index mq = cols.cols();
    Eigen::MatrixXd out(passes, mq);
    constexpr int kChunk = 16;
    const std::size_t chunks = static_cast<std::size_t>((passes + kChunk - 1) / kChunk);
    parallel_for(chunks, jobs, [&](std::size_t c) {
        const int t0 = static_cast<int>(c) * kChunk;
        const int t1 = std::min(passes, t0 + kChunk);
        const Eigen::Index width = static_cast<Eigen::Index>(t1 - t0) * mq;
        Eigen::MatrixXd in(2, width);
        DropoutMasks masks;
        masks.hidden.resize(m.layers() - 1);
        for (std::size_t l = 0; l + 1 < m.layers(); ++l) masks.hidden[l].resize(m.weights[l].rows(), width);
        for (int t = t0; t < t1; ++t) {
            const Eigen::Index off = static_cast<Eigen::Index>(t - t0) * mq;
            in.middleCols(off, mq) = cols;
            Rng rng = make_rng(seed, {static_cast<std::uint64_t>(t)});
            const DropoutMasks one = sample_masks(m, mq, m.config.dropout_p, rng);
            for (std::size_t l = 0; l < one.hidden.size(); ++l) masks.hidden[l].middleCols(off, mq) = one.hidden[l];
        }
        detail::ForwardCache cache;
        detail::forward_cached(m, in, &masks, cache);
        for (int t = t0; t < t1; ++t)
            out.row(t) = cache.output.segment(static_cast<Eigen::Index>(t - t0) * mq, mq);
    });
    return out;
}

// MC-dropout predictive mean and standard deviation at one network-space input.
inline UqPrediction mc_predict(const MlpModel& m, std::span<const double, 2> x, int passes, std::uint64_t seed) {
    Eigen::MatrixXd in(1, 2);
    in << x[0], x[1];
    const Eigen::MatrixXd out = mc_passes(m, in, passes, seed);
    return mc_summarize(std::span(out.data(), static_cast<std::size_t>(passes)), x[0], x[1], m.model_tag);
}

// MC-dropout predictions along an axial profile at a raw bank position.
inline std::vector<UqPrediction> mc_predict_profile(const MlpModel& m, double bank_position,
                                                    std::span<const double> axial_grid, int passes,
                                                    std::uint64_t seed, int jobs = 1) {
    Eigen::MatrixXd raw(static_cast<Eigen::Index>(axial_grid.size()), 2);
    for (std::size_t i = 0; i < axial_grid.size(); ++i) {
        raw(static_cast<Eigen::Index>(i), 0) = bank_position;
        raw(static_cast<Eigen::Index>(i), 1) = axial_grid[i];
    }
    const Eigen::MatrixXd out = mc_passes(m, m.scaler.transform(raw), passes, seed, jobs);
    std::vector<UqPrediction> preds;
    std::vector<double> col(static_cast<std::size_t>(passes));
    for (std::size_t i = 0; i < axial_grid.size(); ++i) {
        for (int t = 0; t < passes; ++t) col[static_cast<std::size_t>(t)] = out(t, static_cast<Eigen::Index>(i));
        preds.push_back(mc_summarize(col, bank_position, axial_grid[i], m.model_tag));
    }
    return preds;
}

}  // namespace fluxlattice
