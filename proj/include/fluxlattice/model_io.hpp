#pragma once
// Versioned, self-describing text container for trained models.
//
//   FLUXLATTICE-MODEL <version>
//   kind gp|mlp
//   model_tag <tag>
//   ... kind-specific records, reals as C99 hex floats (bit exact) ...
//   end <fnv1a-64 of every preceding line, hex>
//
// A GP file stores its training set, hyperparameters and applied jitter; the
// Cholesky factor is recomputed on load by the same code path as fitting.

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "error.hpp"
#include "gp.hpp"
#include "mcdnn.hpp"
#include "rng.hpp"

namespace fluxlattice {

inline constexpr std::string_view kModelMagic = "FLUXLATTICE-MODEL";
inline constexpr int kModelFormatVersion = 1;

using AnyModel = std::variant<GpModel, MlpModel>;

namespace detail {

inline std::string hexfloat(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%a", v);
    return buf;
}

class RecordWriter {
public:
    void line(const std::string& s) { body_ += s + '\n'; }
    std::string finish() const {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash_string(body_)));
        return body_ + "end " + buf + '\n';
    }

private:
    std::string body_;
};

class RecordReader {
public:
    explicit RecordReader(const std::string& content) {
        std::size_t pos = 0;
        std::string body;
        bool ended = false;
        while (pos < content.size()) {
            std::size_t nl = content.find('\n', pos);
            if (nl == std::string::npos) throw IntegrityError("model file truncated (unterminated line)");
            std::string ln = content.substr(pos, nl - pos);
            pos = nl + 1;
            if (ln.rfind("end ", 0) == 0) {
                char buf[32];
                std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash_string(body)));
                if (ln.substr(4) != buf) throw IntegrityError("model file checksum mismatch");
                ended = true;
                break;
            }
            body += ln + '\n';
            lines_.push_back(std::move(ln));
        }
        if (!ended) throw IntegrityError("model file truncated (no end record)");
    }

    std::vector<std::string> fields(std::string_view expect_key) {
        if (next_ >= lines_.size()) throw IntegrityError("model file ends before '" + std::string(expect_key) + "'");
        std::istringstream in(lines_[next_++]);
        std::vector<std::string> f;
        for (std::string tok; in >> tok;) f.push_back(tok);
        if (f.empty() || f[0] != expect_key)
            throw IntegrityError("expected record '" + std::string(expect_key) + "'");
        f.erase(f.begin());
        return f;
    }

    const std::string& raw_line(std::size_t i) const { return lines_.at(i); }
    std::size_t size() const { return lines_.size(); }

private:
    std::vector<std::string> lines_;
    std::size_t next_ = 0;
};

inline double to_real(const std::string& s) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end != s.c_str() + s.size()) throw IntegrityError("bad real '" + s + "'");
    return v;
}

inline long to_int(const std::string& s) {
    char* end = nullptr;
    const long v = std::strtol(s.c_str(), &end, 10);
    if (end != s.c_str() + s.size()) throw IntegrityError("bad integer '" + s + "'");
    return v;
}

inline void need(const std::vector<std::string>& f, std::size_t n, const char* what) {
    if (f.size() != n) throw IntegrityError(std::string("malformed '") + what + "' record");
}

inline void write_scaler(RecordWriter& w, const FeatureScaler& s) {
    w.line("scaler " + hexfloat(s.mean[0]) + ' ' + hexfloat(s.mean[1]) + ' ' + hexfloat(s.scale[0]) + ' ' +
           hexfloat(s.scale[1]));
}

inline FeatureScaler read_scaler(RecordReader& r) {
    auto f = r.fields("scaler");
    need(f, 4, "scaler");
    FeatureScaler s;
    s.mean = {to_real(f[0]), to_real(f[1])};
    s.scale = {to_real(f[2]), to_real(f[3])};
    return s;
}

}  // namespace detail

inline std::string serialize_model(const AnyModel& model) {
    detail::RecordWriter w;
    w.line(std::string(kModelMagic) + ' ' + std::to_string(kModelFormatVersion));
    using detail::hexfloat;
    if (const auto* gp = std::get_if<GpModel>(&model)) {
        w.line("kind gp");
        w.line("model_tag " + gp->model_tag);
        const auto& hp = gp->hyperparams;
        w.line("hyper " + hexfloat(hp.sigma_f) + ' ' + hexfloat(hp.length_scale) + ' ' + hexfloat(hp.jitter) + ' ' +
               hexfloat(gp->applied_jitter));
        detail::write_scaler(w, gp->scaler);
        w.line("points " + std::to_string(gp->size()));
        for (Eigen::Index i = 0; i < gp->size(); ++i)
            w.line("p " + hexfloat(gp->x_train(i, 0)) + ' ' + hexfloat(gp->x_train(i, 1)) + ' ' +
                   hexfloat(gp->y_train(i)) + ' ' + hexfloat(gp->noise_sd(i)));
    } else {
        const auto& m = std::get<MlpModel>(model);
        m.validate();
        w.line("kind mlp");
        w.line("model_tag " + m.model_tag);
        const auto& c = m.config;
        std::string hidden;
        for (int h : c.hidden_sizes) hidden += (hidden.empty() ? "" : ",") + std::to_string(h);
        w.line("config " + hidden + ' ' + hexfloat(c.dropout_p) + ' ' + hexfloat(c.weight_decay) + ' ' +
               hexfloat(c.learning_rate) + ' ' + std::to_string(c.epochs) + ' ' + std::to_string(c.batch_size) + ' ' +
               std::to_string(c.seed) + ' ' + std::to_string(c.mc_passes));
        detail::write_scaler(w, m.scaler);
        w.line("layers " + std::to_string(m.layers()));
        for (std::size_t l = 0; l < m.layers(); ++l) {
            const auto& wt = m.weights[l];
            w.line("layer " + std::to_string(wt.rows()) + ' ' + std::to_string(wt.cols()));
            for (Eigen::Index i = 0; i < wt.rows(); ++i) {
                std::string row = "w";
                for (Eigen::Index j = 0; j < wt.cols(); ++j) row += ' ' + hexfloat(wt(i, j));
                w.line(row);
            }
            std::string b = "b";
            for (Eigen::Index i = 0; i < m.biases[l].size(); ++i) b += ' ' + hexfloat(m.biases[l](i));
            w.line(b);
        }
    }
    return w.finish();
}

inline AnyModel deserialize_model(const std::string& content) {
    // the header is checked before the checksum so a newer format reports its version
    {
        const std::size_t nl = content.find('\n');
        std::istringstream head(content.substr(0, nl));
        std::string magic;
        long version = 0;
        head >> magic >> version;
        if (magic != kModelMagic) throw IntegrityError("not a model file (bad magic)");
        if (!head || version < 1) throw IntegrityError("model file has no valid version tag");
        if (version != kModelFormatVersion) throw VersionError(static_cast<int>(version), kModelFormatVersion);
    }
    detail::RecordReader r(content);
    r.fields(kModelMagic);
    using detail::need;
    using detail::to_int;
    using detail::to_real;
    auto kind = r.fields("kind");
    need(kind, 1, "kind");
    auto tag = r.fields("model_tag");
    const std::string model_tag = tag.empty() ? std::string() : tag[0];

    if (kind[0] == "gp") {
        GpModel m;
        m.model_tag = model_tag;
        auto h = r.fields("hyper");
        need(h, 4, "hyper");
        m.hyperparams = {to_real(h[0]), to_real(h[1]), to_real(h[2])};
        m.applied_jitter = to_real(h[3]);
        m.scaler = detail::read_scaler(r);
        auto np = r.fields("points");
        need(np, 1, "points");
        const long n = to_int(np[0]);
        if (n < 0) throw IntegrityError("negative point count");
        m.x_train.resize(n, 2);
        m.y_train.resize(n);
        m.noise_sd.resize(n);
        for (long i = 0; i < n; ++i) {
            auto p = r.fields("p");
            need(p, 4, "p");
            m.x_train(i, 0) = to_real(p[0]);
            m.x_train(i, 1) = to_real(p[1]);
            m.y_train(i) = to_real(p[2]);
            m.noise_sd(i) = to_real(p[3]);
        }
        gp_refactor(m);
        return m;
    }
    if (kind[0] == "mlp") {
        MlpModel m;
        m.model_tag = model_tag;
        auto c = r.fields("config");
        need(c, 8, "config");
        m.config.hidden_sizes.clear();
        std::istringstream hs(c[0]);
        for (std::string tok; std::getline(hs, tok, ',');) m.config.hidden_sizes.push_back(static_cast<int>(to_int(tok)));
        m.config.dropout_p = to_real(c[1]);
        m.config.weight_decay = to_real(c[2]);
        m.config.learning_rate = to_real(c[3]);
        m.config.epochs = static_cast<int>(to_int(c[4]));
        m.config.batch_size = static_cast<int>(to_int(c[5]));
        m.config.seed = std::stoull(c[6]);
        m.config.mc_passes = static_cast<int>(to_int(c[7]));
        m.scaler = detail::read_scaler(r);
        auto nl = r.fields("layers");
        need(nl, 1, "layers");
        const long layers = to_int(nl[0]);
        for (long l = 0; l < layers; ++l) {
            auto dims = r.fields("layer");
            need(dims, 2, "layer");
            const long rows = to_int(dims[0]), cols = to_int(dims[1]);
            if (rows < 1 || cols < 1) throw IntegrityError("bad layer dimensions");
            Eigen::MatrixXd w(rows, cols);
            for (long i = 0; i < rows; ++i) {
                auto f = r.fields("w");
                need(f, static_cast<std::size_t>(cols), "w");
                for (long j = 0; j < cols; ++j) w(i, j) = to_real(f[static_cast<std::size_t>(j)]);
            }
            auto bf = r.fields("b");
            need(bf, static_cast<std::size_t>(rows), "b");
            Eigen::VectorXd b(rows);
            for (long i = 0; i < rows; ++i) b(i) = to_real(bf[static_cast<std::size_t>(i)]);
            m.weights.push_back(std::move(w));
            m.biases.push_back(std::move(b));
        }
        try {
            m.validate();
        } catch (const ValidationError& e) {
            throw IntegrityError(e.what());
        }
        return m;
    }
    throw IntegrityError("unknown model kind '" + kind[0] + "'");
}

inline void save_model(const AnyModel& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write model file " + path);
    out << serialize_model(model);
    if (!out) throw ValidationError("failed writing model file " + path);
}

inline AnyModel load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open model file " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return deserialize_model(ss.str());
}

template <class M>
M load_model_as(const std::string& path) {
    AnyModel any = load_model(path);
    if (auto* m = std::get_if<M>(&any)) return std::move(*m);
    throw ValidationError("model file " + path + " holds a different model kind");
}

}  // namespace fluxlattice
