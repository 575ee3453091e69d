#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gpia/errors.hpp"
#include "gpia/features.hpp"
#include "gpia/io.hpp"
#include "gpia/rng.hpp"
#include "helpers.hpp"

using namespace gpia;

namespace {

Vector vec(std::initializer_list<double> vals) {
    Vector v(static_cast<Eigen::Index>(vals.size()));
    Eigen::Index i = 0;
    for (double x : vals) v(i++) = x;
    return v;
}

std::vector<FeatureVector> random_side(int count, int dim, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<FeatureVector> out;
    for (int i = 0; i < count; ++i) {
        FeatureVector f;
        f.values.resize(dim);
        for (int j = 0; j < dim; ++j) f.values(j) = rng.normal();
        f.source.sample_id = i;
        out.push_back(std::move(f));
    }
    return out;
}

// Two tight 10-point clusters; matches the reference oracle fixture.
Matrix cluster_fixture() {
    Matrix x(20, 4);
    for (int c = 0; c < 2; ++c) {
        double center = c == 0 ? 0.0 : 8.0;
        for (int k = 0; k < 10; ++k) {
            x(c * 10 + k, 0) = center + 0.3 * std::cos(k);
            x(c * 10 + k, 1) = center + 0.3 * std::sin(k);
            x(c * 10 + k, 2) = center + 0.15 * std::cos(2 * k);
            x(c * 10 + k, 3) = center + 0.15 * std::sin(2 * k);
        }
    }
    return x;
}

}  // namespace

TEST_CASE("ewd matches hand values") {
    CHECK(ewd_per_node(vec({0.5, 0.5})) == doctest::Approx(0.0));
    CHECK(ewd_per_node(vec({1.0, 0.0})) == doctest::Approx(1.0));
    CHECK(ewd_per_node(vec({0.6, 0.3, 0.1})) == doctest::Approx(1.0 / 3.0));
    CHECK_THROWS_AS(ewd_per_node(vec({0.5})), PreconditionError);
    CHECK_THROWS_AS(ewd_per_node(vec({0.5, 1.5})), RangeError);
}

TEST_CASE("ewd is permutation invariant and scale covariant") {
    Vector p = vec({0.1, 0.25, 0.65});
    Vector q = vec({0.65, 0.1, 0.25});
    CHECK(ewd_per_node(p) == doctest::Approx(ewd_per_node(q)));
    for (double c : {0.0, 0.3, 1.0}) {
        Vector scaled = c * p;
        CHECK(ewd_per_node(scaled) == doctest::Approx(c * ewd_per_node(p)));
    }
    CHECK(ewd_per_node(vec({0.25, 0.25, 0.25, 0.25})) == 0.0);
}

TEST_CASE("posterior aggregation") {
    Matrix o(2, 2);
    o << 0.7, 0.3, 0.2, 0.8;
    FeatureVector cat = aggregate_posteriors(o, Aggregation::posterior_concat);
    CHECK(cat.values.size() == 4);
    CHECK(cat.values(0) == 0.7);
    CHECK(cat.values(1) == 0.3);
    CHECK(cat.values(2) == 0.2);
    CHECK(cat.values(3) == 0.8);
    CHECK(cat.source.method == Aggregation::posterior_concat);

    FeatureVector ewd = aggregate_posteriors(o, Aggregation::posterior_ewd);
    CHECK(ewd.values.size() == 2);
    CHECK(ewd.values(0) == doctest::Approx(0.4));
    CHECK(ewd.values(1) == doctest::Approx(0.6));

    Matrix empty;
    CHECK_THROWS_AS(aggregate_posteriors(empty, Aggregation::posterior_concat),
                    UsageError);
    CHECK_THROWS_AS(aggregate_posteriors(o, Aggregation::embed_maxpool),
                    UsageError);
}

TEST_CASE("embedding aggregation") {
    Matrix z(2, 2);
    z << 1, 5, 2, 3;
    FeatureVector mx = aggregate_embeddings({z}, Aggregation::embed_maxpool);
    CHECK(mx.values.size() == 2);
    CHECK(mx.values(0) == 5.0);
    CHECK(mx.values(1) == 3.0);
    FeatureVector mean = aggregate_embeddings({z}, Aggregation::embed_meanpool);
    CHECK(mean.values(0) == doctest::Approx(3.0));
    CHECK(mean.values(1) == doctest::Approx(2.5));

    Matrix a(2, 1), b(2, 1);
    a << 1, 2;
    b << 3, 4;
    FeatureVector cat = aggregate_embeddings({a, b}, Aggregation::embed_concat);
    REQUIRE(cat.values.size() == 4);
    CHECK(cat.values(0) == 1.0);
    CHECK(cat.values(1) == 3.0);
    CHECK(cat.values(2) == 2.0);
    CHECK(cat.values(3) == 4.0);

    Matrix odd(3, 1);
    odd.setZero();
    CHECK_THROWS_AS(aggregate_embeddings({a, odd}, Aggregation::embed_concat),
                    ShapeError);
    CHECK_THROWS_AS(aggregate_embeddings({a}, Aggregation::posterior_ewd),
                    UsageError);
}

TEST_CASE("maxpool dominates meanpool and pooling is permutation covariant") {
    Rng rng(5);
    Matrix z(6, 4);
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 4; ++j) z(i, j) = rng.normal();
    Vector mx = aggregate_embeddings({z}, Aggregation::embed_maxpool).values;
    Vector mn = aggregate_embeddings({z}, Aggregation::embed_meanpool).values;
    for (int i = 0; i < 6; ++i) CHECK(mx(i) >= mn(i));

    std::vector<int> perm = {3, 0, 5, 1, 4, 2};
    Matrix zp(6, 4);
    for (int i = 0; i < 6; ++i) zp.row(i) = z.row(perm[static_cast<std::size_t>(i)]);
    Vector mxp = aggregate_embeddings({zp}, Aggregation::embed_maxpool).values;
    for (int i = 0; i < 6; ++i)
        CHECK(mxp(i) == mx(perm[static_cast<std::size_t>(i)]));
}

TEST_CASE("sampling alignment truncates only the longer side") {
    auto train = random_side(5, 128, 1);
    auto test = random_side(4, 64, 2);
    AlignmentParams params;
    params.method = Alignment::sampling;
    auto [tr, te] = align(train, test, params, 9);
    REQUIRE(tr.size() == 5);
    REQUIRE(te.size() == 4);
    for (const auto& f : tr) CHECK(f.values.size() == 64);
    for (std::size_t i = 0; i < te.size(); ++i)
        CHECK((te[i].values - test[i].values).cwiseAbs().maxCoeff() == 0.0);
    // The same index subset is applied to every train vector: vector 0 and 1
    // keep identical relative entries.
    auto [tr2, te2] = align(train, test, params, 9);
    for (std::size_t i = 0; i < tr.size(); ++i)
        CHECK((tr[i].values - tr2[i].values).cwiseAbs().maxCoeff() == 0.0);
    // Order and identity of samples preserved.
    for (std::size_t i = 0; i < tr.size(); ++i)
        CHECK(tr[i].source.sample_id == static_cast<int>(i));

    auto equal = align(test, test, params, 3);
    for (std::size_t i = 0; i < test.size(); ++i)
        CHECK((equal.first[i].values - test[i].values).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("alignment rejects malformed sides") {
    auto train = random_side(3, 8, 1);
    AlignmentParams params;
    CHECK_THROWS_AS(align(train, {}, params, 1), AlignmentError);
    auto mixed = random_side(3, 8, 2);
    mixed[1].values.resize(5);
    mixed[1].values.setZero();
    CHECK_THROWS_AS(align(train, mixed, params, 1), ShapeError);
    AlignmentParams bad;
    bad.retained_variance = 0.0;
    CHECK_THROWS_AS(align(train, train, bad, 1), ConfigError);
}

TEST_CASE("pca recovers an exact low-rank structure") {
    // Rows lie in a 2-dim affine subspace of R^6.
    Rng rng(11);
    Matrix basis(2, 6);
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 6; ++j) basis(i, j) = rng.normal();
    Matrix x(12, 6);
    for (int i = 0; i < 12; ++i)
        x.row(i) = rng.normal() * basis.row(0) + rng.normal() * basis.row(1);
    Pca p = fit_pca(x, 2);
    Matrix rec = p.reconstruct(p.project(x));
    CHECK((rec - x).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("pca reconstruction error is monotone in k") {
    Rng rng(13);
    Matrix x(20, 6);
    for (int i = 0; i < 20; ++i)
        for (int j = 0; j < 6; ++j) x(i, j) = rng.normal() * (j + 1);
    double prev = std::numeric_limits<double>::infinity();
    for (int k = 1; k <= 6; ++k) {
        Pca p = fit_pca(x, k);
        double err = (p.reconstruct(p.project(x)) - x).squaredNorm();
        CHECK(err <= prev + 1e-9);
        prev = err;
    }
    CHECK(prev < 1e-18);  // full rank reconstructs exactly
}

TEST_CASE("pca sign convention and variance-based selection") {
    Rng rng(17);
    Matrix x(15, 5);
    for (int i = 0; i < 15; ++i)
        for (int j = 0; j < 5; ++j) x(i, j) = rng.normal();
    Pca p = fit_pca(x, 3);
    for (int i = 0; i < 3; ++i) {
        Eigen::Index arg;
        p.components.row(i).cwiseAbs().maxCoeff(&arg);
        CHECK(p.components(i, arg) > 0.0);
    }
    CHECK(p.explained(0) >= p.explained(1));

    // One dominant direction: tiny retained variance keeps one component.
    Matrix dom(20, 4);
    Rng rng2(19);
    for (int i = 0; i < 20; ++i) {
        double t = rng2.normal();
        for (int j = 0; j < 4; ++j) dom(i, j) = 100.0 * t + 0.01 * rng2.normal();
    }
    Pca small = fit_pca_variance(dom, 0.5);
    CHECK(small.components.rows() == 1);
    Pca full = fit_pca_variance(dom, 1.0);
    Matrix rec = full.reconstruct(full.project(dom));
    CHECK((rec - dom).cwiseAbs().maxCoeff() < 1e-6);

    CHECK_THROWS_AS(fit_pca(x, 0), RangeError);
    CHECK_THROWS_AS(fit_pca(x, 99), RangeError);
}

TEST_CASE("pca alignment projects both sides to a common width") {
    auto train = random_side(12, 10, 23);
    auto test = random_side(5, 10, 24);
    AlignmentParams params;
    params.method = Alignment::pca;
    params.k = 3;
    auto [tr, te] = align(train, test, params, 31);
    for (const auto& f : tr) CHECK(f.values.size() == 3);
    for (const auto& f : te) CHECK(f.values.size() == 3);
}

TEST_CASE("autoencoder compresses only the longer side") {
    auto train = random_side(10, 12, 41);
    auto test = random_side(6, 4, 42);
    AlignmentParams params;
    params.method = Alignment::autoencoder;
    auto [tr, te] = align(train, test, params, 5);
    for (const auto& f : tr) {
        CHECK(f.values.size() == 4);
        CHECK(f.values.allFinite());
    }
    for (std::size_t i = 0; i < te.size(); ++i)
        CHECK((te[i].values - test[i].values).cwiseAbs().maxCoeff() == 0.0);
    auto [tr2, te2] = align(train, test, params, 5);
    for (std::size_t i = 0; i < tr.size(); ++i)
        CHECK((tr[i].values - tr2[i].values).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("autoencoder learns a compressible structure") {
    // Data on a 2-dim positive cone embedded in R^8; a 2-unit code can fit it
    // far better than the untrained network.
    Rng rng(55);
    Matrix basis(2, 8);
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 8; ++j) basis(i, j) = std::abs(rng.normal());
    Matrix x(30, 8);
    for (int i = 0; i < 30; ++i)
        x.row(i) = std::abs(rng.normal()) * basis.row(0) +
                   std::abs(rng.normal()) * basis.row(1);
    Matrix code = autoencode(x, 2, 7);
    CHECK(code.rows() == 30);
    CHECK(code.cols() == 2);
    CHECK(code.allFinite());
    CHECK_THROWS_AS(autoencode(x, 0, 7), RangeError);
}

TEST_CASE("tsne preconditions and degeneracy") {
    Matrix tiny(3, 2);
    tiny.setRandom();
    CHECK_THROWS_AS(tsne(tiny, 1.0, 10, 0), PreconditionError);
    Matrix x(9, 2);
    x.setRandom();
    CHECK_THROWS_AS(tsne(x, 3.0, 10, 0), PreconditionError);  // perp >= m/3
    Matrix same = Matrix::Ones(6, 3);
    CHECK_THROWS_AS(tsne(same, 1.5, 10, 0), DegenerateError);
}

TEST_CASE("tsne separates two clusters beyond their spread") {
    Matrix x = cluster_fixture();
    Matrix y = tsne(x, 4.0, 1000, 3);
    REQUIRE(y.rows() == 20);
    REQUIRE(y.cols() == 2);
    CHECK(y.allFinite());
    Eigen::RowVector2d ca = y.topRows(10).colwise().mean();
    Eigen::RowVector2d cb = y.bottomRows(10).colwise().mean();
    double separation = (ca - cb).norm();
    double spread_a = 0.0, spread_b = 0.0;
    for (int i = 0; i < 10; ++i) {
        spread_a += (y.row(i) - ca).norm() / 10.0;
        spread_b += (y.row(10 + i) - cb).norm() / 10.0;
    }
    CHECK(separation > 2.0 * std::max(spread_a, spread_b));

    Matrix y2 = tsne(x, 4.0, 1000, 3);
    CHECK((y - y2).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("tsne alignment embeds both sides into the plane") {
    auto train = random_side(10, 6, 61);
    auto test = random_side(6, 4, 62);
    AlignmentParams params;
    params.method = Alignment::tsne;
    params.iterations = 120;  // keep the test quick
    auto [tr, te] = align(train, test, params, 8);
    for (const auto& f : tr) {
        CHECK(f.values.size() == 2);
        CHECK(f.values.allFinite());
    }
    for (const auto& f : te) CHECK(f.values.size() == 2);
}

TEST_CASE("feature csv export") {
    std::vector<FeatureVector> rows(2);
    rows[0].values = vec({1.5, 2.0});
    rows[1].values = vec({0.25, -1.0});
    std::string path = gpia::testing::temp_dir("feat") + "/f.csv";
    export_features_csv(rows, {1, 0}, path);
    CHECK(read_text_file(path) == "1.5,2,1\n0.25,-1,0\n");
    CHECK_THROWS_AS(export_features_csv(rows, {1}, path), ShapeError);
}

TEST_CASE("aggregation strings round trip") {
    for (const char* s : {"posterior-concat", "posterior-ewd", "embed-concat",
                          "embed-maxpool", "embed-meanpool"})
        CHECK(aggregation_to_string(aggregation_from_string(s)) == s);
    for (const char* s : {"sampling", "tsne", "pca", "autoencoder"})
        CHECK(alignment_to_string(alignment_from_string(s)) == s);
    CHECK_THROWS_AS(aggregation_from_string("concat"), ParseError);
    CHECK_THROWS_AS(alignment_from_string("umap"), ParseError);
}
