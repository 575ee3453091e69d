#include <cmath>
#include <limits>

#include "gpia/errors.hpp"
#include "gpia/features.hpp"
#include "gpia/rng.hpp"

namespace gpia {

namespace {

// Per-row precision search hitting the target entropy log(perplexity).
Matrix conditional_affinities(const Matrix& d2, double perplexity) {
    Eigen::Index m = d2.rows();
    Matrix p = Matrix::Zero(m, m);
    double target = std::log(perplexity);
    for (Eigen::Index i = 0; i < m; ++i) {
        double beta = 1.0;
        double lo = -std::numeric_limits<double>::infinity();
        double hi = std::numeric_limits<double>::infinity();
        Vector row(m);
        for (int it = 0; it < 50; ++it) {
            double sum = 0.0;
            for (Eigen::Index j = 0; j < m; ++j) {
                row(j) = j == i ? 0.0 : std::exp(-beta * d2(i, j));
                sum += row(j);
            }
            sum = std::max(sum, 1e-300);
            double weighted = 0.0;
            for (Eigen::Index j = 0; j < m; ++j) weighted += row(j) * d2(i, j);
            double h = std::log(sum) + beta * weighted / sum;
            double diff = h - target;
            if (std::abs(diff) < 1e-5) break;
            if (diff > 0.0) {
                lo = beta;
                beta = std::isinf(hi) ? beta * 2.0 : (beta + hi) / 2.0;
            } else {
                hi = beta;
                beta = std::isinf(lo) ? beta / 2.0 : (beta + lo) / 2.0;
            }
        }
        double sum = std::max(row.sum(), 1e-300);
        p.row(i) = row.transpose() / sum;
    }
    return p;
}

}  // namespace

Matrix tsne(const Matrix& X, double perplexity, int iters, std::uint64_t seed) {
    (void)seed;  // the PCA initialization is already deterministic
    Eigen::Index m = X.rows();
    if (m < 4) throw PreconditionError("tsne: need at least 4 rows");
    if (perplexity <= 0.0 || perplexity >= static_cast<double>(m) / 3.0)
        throw PreconditionError("tsne: perplexity must lie in (0, rows/3)");
    if (iters < 1) throw PreconditionError("tsne: iters must be >= 1");

    Vector sq = X.rowwise().squaredNorm();
    Matrix d2 = (-2.0 * X * X.transpose());
    d2.colwise() += sq;
    d2.rowwise() += sq.transpose();
    d2 = d2.cwiseMax(0.0);
    if (d2.maxCoeff() <= 0.0)
        throw DegenerateError("tsne: all rows identical, affinities undefined");

    Matrix pc = conditional_affinities(d2, perplexity);
    Matrix P = (pc + pc.transpose()) / (2.0 * static_cast<double>(m));
    P = P.cwiseMax(1e-12);

    // PCA initialization scaled to a tiny spread.
    Matrix y = Matrix::Zero(m, 2);
    {
        int k = static_cast<int>(std::min<Eigen::Index>(2, std::min(m, X.cols())));
        Pca p0 = fit_pca(X, k);
        Matrix proj = p0.project(X);
        y.leftCols(proj.cols()) = proj;
        double sd = std::sqrt(y.array().square().mean());
        if (sd > 0.0) y *= 1e-4 / sd;
    }

    Matrix inc = Matrix::Zero(m, 2);
    Matrix gains = Matrix::Ones(m, 2);
    for (int it = 0; it < iters; ++it) {
        Vector ysq = y.rowwise().squaredNorm();
        Matrix wnum = (-2.0 * y * y.transpose());
        wnum.colwise() += ysq;
        wnum.rowwise() += ysq.transpose();
        wnum = (1.0 + wnum.cwiseMax(0.0).array()).inverse().matrix();
        wnum.diagonal().setZero();
        double sumw = std::max(wnum.sum(), 1e-300);

        Matrix grad = Matrix::Zero(m, 2);
        for (Eigen::Index i = 0; i < m; ++i) {
            for (Eigen::Index j = 0; j < m; ++j) {
                if (i == j) continue;
                double q = std::max(wnum(i, j) / sumw, 1e-12);
                double mult = 4.0 * (P(i, j) - q) * wnum(i, j);
                grad(i, 0) += mult * (y(i, 0) - y(j, 0));
                grad(i, 1) += mult * (y(i, 1) - y(j, 1));
            }
        }
        double momentum = it < 250 ? 0.5 : 0.8;
        // Per-parameter adaptive gains keep the fixed step size stable.
        for (Eigen::Index i = 0; i < m; ++i)
            for (int c = 0; c < 2; ++c) {
                bool flip = (grad(i, c) > 0.0) != (inc(i, c) > 0.0);
                gains(i, c) = flip ? gains(i, c) + 0.2 : gains(i, c) * 0.8;
                gains(i, c) = std::max(gains(i, c), 0.01);
            }
        inc = momentum * inc - 200.0 * gains.cwiseProduct(grad);
        y += inc;
        y.rowwise() -= y.colwise().mean();
    }
    if (!y.allFinite()) throw DivergenceError("tsne: embedding diverged");
    return y;
}

}  // namespace gpia
