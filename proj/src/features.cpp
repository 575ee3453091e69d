#include "gpia/features.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/SVD>
#include <nlohmann/json.hpp>

#include "gpia/errors.hpp"
#include "gpia/io.hpp"
#include "gpia/rng.hpp"

namespace gpia {

Aggregation aggregation_from_string(const std::string& s) {
    if (s == "posterior-concat") return Aggregation::posterior_concat;
    if (s == "posterior-ewd") return Aggregation::posterior_ewd;
    if (s == "embed-concat") return Aggregation::embed_concat;
    if (s == "embed-maxpool") return Aggregation::embed_maxpool;
    if (s == "embed-meanpool") return Aggregation::embed_meanpool;
    throw ParseError("unknown aggregation: " + s);
}

std::string aggregation_to_string(Aggregation a) {
    switch (a) {
        case Aggregation::posterior_concat: return "posterior-concat";
        case Aggregation::posterior_ewd: return "posterior-ewd";
        case Aggregation::embed_concat: return "embed-concat";
        case Aggregation::embed_maxpool: return "embed-maxpool";
        case Aggregation::embed_meanpool: return "embed-meanpool";
    }
    throw RangeError("bad aggregation enum");
}

bool is_posterior_aggregation(Aggregation a) {
    return a == Aggregation::posterior_concat || a == Aggregation::posterior_ewd;
}

double ewd_per_node(const Vector& p) {
    Eigen::Index l = p.size();
    if (l < 2) throw PreconditionError("ewd_per_node: need at least 2 entries");
    for (Eigen::Index i = 0; i < l; ++i)
        if (p(i) < -1e-12 || p(i) > 1.0 + 1e-12)
            throw RangeError("ewd_per_node: entries must lie in [0,1]");
    double total = 0.0;
    for (Eigen::Index i = 0; i < l; ++i)
        for (Eigen::Index j = 0; j < l; ++j)
            if (i != j) total += std::abs(p(i) - p(j));
    return total / (static_cast<double>(l) * static_cast<double>(l - 1));
}

FeatureVector aggregate_posteriors(const Matrix& O, Aggregation m) {
    if (!is_posterior_aggregation(m))
        throw UsageError("aggregate_posteriors: method is not a posterior aggregation");
    if (O.rows() == 0 || O.cols() == 0)
        throw UsageError("aggregate_posteriors: empty posterior matrix");
    FeatureVector out;
    out.source.method = m;
    if (m == Aggregation::posterior_concat) {
        out.values.resize(O.rows() * O.cols());
        Eigen::Index pos = 0;
        for (Eigen::Index i = 0; i < O.rows(); ++i)
            for (Eigen::Index j = 0; j < O.cols(); ++j) out.values(pos++) = O(i, j);
    } else {
        out.values.resize(O.rows());
        for (Eigen::Index i = 0; i < O.rows(); ++i)
            out.values(i) = ewd_per_node(O.row(i));
    }
    return out;
}

FeatureVector aggregate_embeddings(const std::vector<Matrix>& Zs, Aggregation m) {
    if (is_posterior_aggregation(m))
        throw UsageError("aggregate_embeddings: method is not an embedding aggregation");
    if (Zs.empty() || Zs.front().rows() == 0)
        throw UsageError("aggregate_embeddings: no embedding matrices");
    Eigen::Index n = Zs.front().rows();
    Eigen::Index total_d = 0;
    for (const Matrix& z : Zs) {
        if (z.rows() != n)
            throw ShapeError("aggregate_embeddings: inconsistent row counts");
        total_d += z.cols();
    }
    Matrix cat(n, total_d);
    Eigen::Index col = 0;
    for (const Matrix& z : Zs) {
        cat.middleCols(col, z.cols()) = z;
        col += z.cols();
    }
    FeatureVector out;
    out.source.method = m;
    if (m == Aggregation::embed_concat) {
        out.values.resize(n * total_d);
        Eigen::Index pos = 0;
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index j = 0; j < total_d; ++j) out.values(pos++) = cat(i, j);
    } else if (m == Aggregation::embed_maxpool) {
        out.values = cat.rowwise().maxCoeff();
    } else {
        out.values = cat.rowwise().mean();
    }
    return out;
}

Alignment alignment_from_string(const std::string& s) {
    if (s == "sampling") return Alignment::sampling;
    if (s == "tsne") return Alignment::tsne;
    if (s == "pca") return Alignment::pca;
    if (s == "autoencoder") return Alignment::autoencoder;
    throw ParseError("unknown alignment: " + s);
}

std::string alignment_to_string(Alignment a) {
    switch (a) {
        case Alignment::sampling: return "sampling";
        case Alignment::tsne: return "tsne";
        case Alignment::pca: return "pca";
        case Alignment::autoencoder: return "autoencoder";
    }
    throw RangeError("bad alignment enum");
}

void AlignmentParams::validate() const {
    if (perplexity <= 0.0) throw ConfigError("perplexity must be > 0");
    if (iterations < 1) throw ConfigError("iterations must be >= 1");
    if (retained_variance <= 0.0 || retained_variance > 1.0)
        throw ConfigError("retained_variance must lie in (0,1]");
    if (k < 0) throw ConfigError("pca k must be >= 0");
}

AlignmentParams AlignmentParams::from_json(const nlohmann::json& j) {
    AlignmentParams p;
    if (j.is_string()) {
        p.method = alignment_from_string(j.get<std::string>());
        p.validate();
        return p;
    }
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string& key = it.key();
        if (key == "method") p.method = alignment_from_string(it->get<std::string>());
        else if (key == "perplexity") p.perplexity = it->get<double>();
        else if (key == "iterations") p.iterations = it->get<int>();
        else if (key == "retained_variance") p.retained_variance = it->get<double>();
        else if (key == "k") p.k = it->get<int>();
        else throw ParseError("unknown AlignmentParams field: " + key);
    }
    p.validate();
    return p;
}

nlohmann::json AlignmentParams::to_json() const {
    return nlohmann::json{{"method", alignment_to_string(method)},
                          {"perplexity", perplexity},
                          {"iterations", iterations},
                          {"retained_variance", retained_variance},
                          {"k", k}};
}

namespace {

Eigen::Index common_length(const std::vector<FeatureVector>& side,
                           const char* what) {
    if (side.empty())
        throw AlignmentError(std::string("align: ") + what + " side is empty");
    Eigen::Index len = side.front().values.size();
    for (const FeatureVector& f : side)
        if (f.values.size() != len)
            throw ShapeError(std::string("align: ") + what +
                             " vectors have mixed lengths");
    if (len == 0)
        throw AlignmentError(std::string("align: ") + what + " vectors are empty");
    return len;
}

// Seeded index subset applied to every vector of the longer side.
void truncate_side(std::vector<FeatureVector>& side, Eigen::Index keep,
                   std::uint64_t seed) {
    Eigen::Index len = side.front().values.size();
    Rng rng(sub_seed(seed, 0xa115ULL));
    std::vector<int> idx = rng.sample_indices(static_cast<int>(len),
                                              static_cast<int>(keep));
    for (FeatureVector& f : side) {
        Vector cut(keep);
        for (Eigen::Index i = 0; i < keep; ++i)
            cut(i) = f.values(idx[static_cast<std::size_t>(i)]);
        f.values = std::move(cut);
    }
}

void sampling_align(std::vector<FeatureVector>& train,
                    std::vector<FeatureVector>& test, std::uint64_t seed) {
    Eigen::Index lt = train.front().values.size();
    Eigen::Index ls = test.front().values.size();
    if (lt == ls) return;
    if (lt > ls) truncate_side(train, ls, seed);
    else truncate_side(test, lt, seed);
}

Matrix stack_rows(const std::vector<FeatureVector>& side) {
    Matrix m(static_cast<Eigen::Index>(side.size()), side.front().values.size());
    for (std::size_t i = 0; i < side.size(); ++i)
        m.row(static_cast<Eigen::Index>(i)) = side[i].values.transpose();
    return m;
}

void unstack_rows(const Matrix& m, std::vector<FeatureVector>& side) {
    for (std::size_t i = 0; i < side.size(); ++i)
        side[i].values = m.row(static_cast<Eigen::Index>(i)).transpose();
}

}  // namespace

std::pair<std::vector<FeatureVector>, std::vector<FeatureVector>> align(
    const std::vector<FeatureVector>& train,
    const std::vector<FeatureVector>& test, const AlignmentParams& params,
    std::uint64_t seed) {
    params.validate();
    common_length(train, "train");
    common_length(test, "test");
    std::vector<FeatureVector> tr = train, te = test;

    switch (params.method) {
        case Alignment::sampling: {
            sampling_align(tr, te, seed);
            break;
        }
        case Alignment::tsne: {
            sampling_align(tr, te, seed);
            Matrix joint(static_cast<Eigen::Index>(tr.size() + te.size()),
                         tr.front().values.size());
            joint.topRows(static_cast<Eigen::Index>(tr.size())) = stack_rows(tr);
            joint.bottomRows(static_cast<Eigen::Index>(te.size())) = stack_rows(te);
            double perp = std::min(params.perplexity,
                                   static_cast<double>(joint.rows()) / 4.0);
            Matrix y = tsne(joint, perp, params.iterations, sub_seed(seed, 0x75eULL));
            unstack_rows(y.topRows(static_cast<Eigen::Index>(tr.size())), tr);
            unstack_rows(y.bottomRows(static_cast<Eigen::Index>(te.size())), te);
            break;
        }
        case Alignment::pca: {
            sampling_align(tr, te, seed);
            Matrix xtr = stack_rows(tr);
            Pca p = params.k > 0 ? fit_pca(xtr, params.k)
                                 : fit_pca_variance(xtr, params.retained_variance);
            unstack_rows(p.project(xtr), tr);
            unstack_rows(p.project(stack_rows(te)), te);
            break;
        }
        case Alignment::autoencoder: {
            Eigen::Index lt = tr.front().values.size();
            Eigen::Index ls = te.front().values.size();
            if (lt != ls) {
                auto& longer = lt > ls ? tr : te;
                Eigen::Index target = std::min(lt, ls);
                Matrix codes = autoencode(stack_rows(longer),
                                          static_cast<int>(target),
                                          sub_seed(seed, 0xaecULL));
                unstack_rows(codes, longer);
            }
            break;
        }
    }
    return {std::move(tr), std::move(te)};
}

Matrix Pca::project(const Matrix& X) const {
    if (X.cols() != mean.size())
        throw ShapeError("pca: input width does not match the fitted width");
    return (X.rowwise() - mean.transpose()) * components.transpose();
}

Matrix Pca::reconstruct(const Matrix& Y) const {
    if (Y.cols() != components.rows())
        throw ShapeError("pca: code width does not match component count");
    return (Y * components).rowwise() + mean.transpose();
}

Pca fit_pca(const Matrix& X, int k) {
    if (X.rows() < 1 || X.cols() < 1) throw PreconditionError("pca: empty input");
    if (k < 1 || k > std::min(X.rows(), X.cols()))
        throw RangeError("pca: k must lie in [1, min(rows, cols)]");
    Pca p;
    p.mean = X.colwise().mean();
    Matrix centered = X.rowwise() - p.mean.transpose();
    Eigen::BDCSVD<Matrix> svd(centered, Eigen::ComputeThinU | Eigen::ComputeThinV);
    p.components = svd.matrixV().leftCols(k).transpose();
    p.explained.resize(k);
    double denom = X.rows() > 1 ? static_cast<double>(X.rows() - 1) : 1.0;
    for (int i = 0; i < k; ++i) {
        double s = svd.singularValues()(i);
        p.explained(i) = s * s / denom;
    }
    // Sign convention: the largest-magnitude loading of each component is
    // positive.
    for (int i = 0; i < k; ++i) {
        Eigen::Index arg;
        p.components.row(i).cwiseAbs().maxCoeff(&arg);
        if (p.components(i, arg) < 0.0) p.components.row(i) *= -1.0;
    }
    return p;
}

Pca fit_pca_variance(const Matrix& X, double retained) {
    if (retained <= 0.0 || retained > 1.0)
        throw RangeError("pca: retained variance must lie in (0,1]");
    if (X.rows() < 1 || X.cols() < 1) throw PreconditionError("pca: empty input");
    Matrix centered = X.rowwise() - X.colwise().mean();
    Eigen::BDCSVD<Matrix> svd(centered);
    Vector sv = svd.singularValues();
    double total = sv.squaredNorm();
    int k = 1;
    if (total > 0.0) {
        double acc = 0.0;
        for (k = 0; k < sv.size(); ++k) {
            acc += sv(k) * sv(k);
            if (acc / total >= retained) break;
        }
        k = std::min<int>(k + 1, static_cast<int>(sv.size()));
    }
    return fit_pca(X, k);
}

Matrix autoencode(const Matrix& X, int target_dim, std::uint64_t seed,
                  int epochs, double lr) {
    if (target_dim < 1) throw RangeError("autoencoder: target_dim must be >= 1");
    if (X.rows() < 1) throw PreconditionError("autoencoder: empty input");
    Eigen::Index m = X.rows(), d = X.cols();
    Rng rng(sub_seed(seed, 0xae0ULL));
    auto glorot = [&](Eigen::Index r, Eigen::Index c) {
        double limit = std::sqrt(6.0 / static_cast<double>(r + c));
        Matrix w(r, c);
        for (Eigen::Index i = 0; i < r; ++i)
            for (Eigen::Index j = 0; j < c; ++j) w(i, j) = rng.uniform(-limit, limit);
        return w;
    };
    Matrix W1 = glorot(d, target_dim), W2 = glorot(target_dim, d);
    Vector b1 = Vector::Zero(target_dim), b2 = Vector::Zero(d);

    Matrix mW1 = Matrix::Zero(d, target_dim), vW1 = mW1;
    Matrix mW2 = Matrix::Zero(target_dim, d), vW2 = mW2;
    Vector mb1 = Vector::Zero(target_dim), vb1 = mb1;
    Vector mb2 = Vector::Zero(d), vb2 = mb2;
    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    auto adam = [&](auto& w, auto& mm, auto& vv, const auto& g, double bc1,
                    double bc2) {
        mm = beta1 * mm + (1.0 - beta1) * g;
        vv = beta2 * vv + (1.0 - beta2) * g.cwiseProduct(g);
        w -= lr * (mm / bc1).cwiseQuotient(((vv / bc2).cwiseSqrt().array() + eps).matrix());
    };

    double scale = 1.0 / (static_cast<double>(m) * static_cast<double>(d));
    for (int e = 1; e <= epochs; ++e) {
        Matrix pre = (X * W1).rowwise() + b1.transpose();
        Matrix code = pre.cwiseMax(0.0);
        Matrix out = (code * W2).rowwise() + b2.transpose();
        Matrix dout = 2.0 * scale * (out - X);
        Matrix gW2 = code.transpose() * dout;
        Vector gb2 = dout.colwise().sum();
        Matrix dcode = (dout * W2.transpose())
                           .cwiseProduct(pre.unaryExpr(
                               [](double v) { return v > 0.0 ? 1.0 : 0.0; }));
        Matrix gW1 = X.transpose() * dcode;
        Vector gb1 = dcode.colwise().sum();
        double bc1 = 1.0 - std::pow(beta1, e), bc2 = 1.0 - std::pow(beta2, e);
        adam(W1, mW1, vW1, gW1, bc1, bc2);
        adam(W2, mW2, vW2, gW2, bc1, bc2);
        adam(b1, mb1, vb1, gb1, bc1, bc2);
        adam(b2, mb2, vb2, gb2, bc1, bc2);
    }
    return ((X * W1).rowwise() + b1.transpose()).cwiseMax(0.0);
}

void export_features_csv(const std::vector<FeatureVector>& rows,
                         const std::vector<int>& labels,
                         const std::string& path) {
    if (rows.size() != labels.size())
        throw ShapeError("export_features_csv: row/label count mismatch");
    std::string out;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const Vector& v = rows[i].values;
        for (Eigen::Index j = 0; j < v.size(); ++j) {
            out += format_double(v(j));
            out += ',';
        }
        out += std::to_string(labels[i]);
        out += '\n';
    }
    write_text_file(path, out);
}

}  // namespace gpia
