#include "doctest.h"

#include <cmath>

#include <nlohmann/json.hpp>

#include "gpia/classifiers.hpp"
#include "gpia/errors.hpp"
#include "gpia/rng.hpp"
#include "helpers.hpp"

using namespace gpia;

namespace {

// Two blobs separated by a wide margin along x0 + x1. Class 0 entirely in
// the negative quadrant, class 1 in the positive one.
std::pair<Matrix, std::vector<int>> blobs(int per_class, std::uint64_t seed) {
    Rng rng(seed);
    Matrix x(2 * per_class, 2);
    std::vector<int> y;
    for (int i = 0; i < per_class; ++i) {
        x(i, 0) = -2.0 + 0.5 * rng.uniform(-1.0, 1.0);
        x(i, 1) = -2.0 + 0.5 * rng.uniform(-1.0, 1.0);
        y.push_back(0);
    }
    for (int i = 0; i < per_class; ++i) {
        x(per_class + i, 0) = 2.0 + 0.5 * rng.uniform(-1.0, 1.0);
        x(per_class + i, 1) = 2.0 + 0.5 * rng.uniform(-1.0, 1.0);
        y.push_back(1);
    }
    return {x, y};
}

}  // namespace

TEST_CASE("classifier strings round trip") {
    for (const char* s : {"mlp", "rf", "lr"})
        CHECK(classifier_to_string(classifier_from_string(s)) == s);
    CHECK_THROWS_AS(classifier_from_string("svm"), ParseError);
}

TEST_CASE("lr separates a margin fixture perfectly") {
    auto [x, y] = blobs(12, 3);
    ClassifierConfig cfg;
    cfg.kind = ClassifierKind::lr;
    AttackModel m = fit(x, y, cfg, 1);
    auto [labels, scores] = predict(m, x);
    CHECK(attack_accuracy(labels, y) == 1.0);
    for (Eigen::Index i = 0; i < scores.size(); ++i) {
        CHECK(scores(i) >= 0.0);
        CHECK(scores(i) <= 1.0);
    }
}

TEST_CASE("mlp learns the blob fixture") {
    auto [x, y] = blobs(12, 5);
    ClassifierConfig cfg;
    cfg.kind = ClassifierKind::mlp;
    cfg.mlp_epochs = 300;
    AttackModel m = fit(x, y, cfg, 2);
    auto [labels, scores] = predict(m, x);
    CHECK(attack_accuracy(labels, y) == 1.0);
}

TEST_CASE("rf training accuracy is 1 on conflict-free data") {
    Rng rng(7);
    Matrix x(30, 4);
    std::vector<int> y;
    for (int i = 0; i < 30; ++i) {
        for (int j = 0; j < 4; ++j) x(i, j) = rng.normal();
        y.push_back(i % 2);
    }
    ClassifierConfig cfg;
    cfg.kind = ClassifierKind::rf;
    cfg.n_trees = 30;
    AttackModel m = fit(x, y, cfg, 3);
    auto [labels, scores] = predict(m, x);
    // Bootstrap forests memorize with min_leaf 1 and unlimited depth.
    CHECK(attack_accuracy(labels, y) >= 0.95);
}

TEST_CASE("rf tolerates constant columns") {
    auto [x, y] = blobs(10, 11);
    Matrix wide(x.rows(), 3);
    wide.leftCols(2) = x;
    wide.col(2).setConstant(42.0);
    ClassifierConfig cfg;
    cfg.kind = ClassifierKind::rf;
    cfg.n_trees = 20;
    AttackModel m = fit(wide, y, cfg, 4);
    auto [labels, scores] = predict(m, wide);
    CHECK(attack_accuracy(labels, y) == 1.0);
}

TEST_CASE("rf is invariant to exact linear feature scaling") {
    auto [x, y] = blobs(10, 13);
    ClassifierConfig cfg;
    cfg.kind = ClassifierKind::rf;
    cfg.n_trees = 15;
    AttackModel m = fit(x, y, cfg, 5);
    Matrix scaled = x;
    scaled.col(0) *= 4.0;  // power of two keeps thresholds exact
    AttackModel ms = fit(scaled, y, cfg, 5);
    Rng rng(17);
    Matrix probe(20, 2);
    for (int i = 0; i < 20; ++i) {
        probe(i, 0) = rng.uniform(-3.0, 3.0);
        probe(i, 1) = rng.uniform(-3.0, 3.0);
    }
    Matrix probe_scaled = probe;
    probe_scaled.col(0) *= 4.0;
    auto [la, sa] = predict(m, probe);
    auto [lb, sb] = predict(ms, probe_scaled);
    CHECK(la == lb);
    CHECK((sa - sb).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("degenerate labels are rejected") {
    auto [x, y] = blobs(5, 19);
    std::vector<int> zeros(y.size(), 0);
    ClassifierConfig cfg;
    cfg.kind = ClassifierKind::lr;
    CHECK_THROWS_AS(fit(x, zeros, cfg, 1), DegenerateError);
    std::vector<int> ones(y.size(), 1);
    CHECK_THROWS_AS(fit(x, ones, cfg, 1), DegenerateError);
    std::vector<int> bad = y;
    bad[0] = 2;
    CHECK_THROWS_AS(fit(x, bad, cfg, 1), RangeError);
    CHECK_THROWS_AS(fit(Matrix(1, 2), {1}, cfg, 1), PreconditionError);
}

TEST_CASE("zero-weight mlp scores one half and ties go positive") {
    AttackModel m;
    m.cfg.kind = ClassifierKind::mlp;
    m.cfg.mlp_layers = {3};
    m.in_dim = 2;
    m.W.push_back(Matrix::Zero(2, 3));
    m.W.push_back(Matrix::Zero(3, 1));
    m.b.push_back(Vector::Zero(3));
    m.b.push_back(Vector::Zero(1));
    Matrix x(4, 2);
    x.setRandom();
    auto [labels, scores] = predict(m, x);
    for (Eigen::Index i = 0; i < scores.size(); ++i) {
        CHECK(scores(i) == 0.5);
        CHECK(labels[static_cast<std::size_t>(i)] == 1);
    }
}

TEST_CASE("predict edge cases") {
    auto [x, y] = blobs(5, 23);
    ClassifierConfig cfg;
    cfg.kind = ClassifierKind::lr;
    AttackModel m = fit(x, y, cfg, 1);
    auto [labels, scores] = predict(m, Matrix(0, 2));
    CHECK(labels.empty());
    CHECK(scores.size() == 0);
    CHECK_THROWS_AS(predict(m, Matrix(3, 5)), ShapeError);
}

TEST_CASE("attack accuracy") {
    std::vector<int> truth = {1, 0, 1, 1, 0, 0, 1, 0, 1, 1};
    std::vector<int> pred = truth;
    pred[4] = 1;
    CHECK(attack_accuracy(pred, truth) == doctest::Approx(0.9));
    CHECK(attack_accuracy(truth, truth) == 1.0);
    std::vector<int> flipped;
    for (int v : truth) flipped.push_back(1 - v);
    CHECK(attack_accuracy(flipped, truth) == 0.0);
    CHECK(attack_accuracy(pred, truth) + attack_accuracy(flipped, truth) <=
          1.0 + 1e-12);
    // Complement identity for binary labels.
    std::vector<int> pred_flip;
    for (int v : pred) pred_flip.push_back(1 - v);
    CHECK(attack_accuracy(pred, truth) + attack_accuracy(pred_flip, truth) ==
          doctest::Approx(1.0));
    CHECK_THROWS_AS(attack_accuracy({1}, {1, 0}), ShapeError);
    CHECK_THROWS_AS(attack_accuracy({}, {}), PreconditionError);
}

TEST_CASE("fits are deterministic under seed") {
    auto [x, y] = blobs(10, 29);
    Matrix probe(6, 2);
    probe.setRandom();
    for (ClassifierKind kind :
         {ClassifierKind::mlp, ClassifierKind::rf, ClassifierKind::lr}) {
        CAPTURE(classifier_to_string(kind));
        ClassifierConfig cfg;
        cfg.kind = kind;
        cfg.mlp_epochs = 50;
        cfg.n_trees = 10;
        AttackModel a = fit(x, y, cfg, 77);
        AttackModel b = fit(x, y, cfg, 77);
        auto [la, sa] = predict(a, probe);
        auto [lb, sb] = predict(b, probe);
        CHECK((sa - sb).cwiseAbs().maxCoeff() == 0.0);
    }
    // Different seeds move the stochastic fits.
    ClassifierConfig cfg;
    cfg.kind = ClassifierKind::mlp;
    cfg.mlp_epochs = 50;
    AttackModel a = fit(x, y, cfg, 77);
    AttackModel c = fit(x, y, cfg, 78);
    auto [la, sa] = predict(a, probe);
    auto [lc, sc] = predict(c, probe);
    CHECK((sa - sc).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("serialization reproduces predictions") {
    auto [x, y] = blobs(8, 31);
    Matrix probe(5, 2);
    probe.setRandom();
    for (ClassifierKind kind :
         {ClassifierKind::mlp, ClassifierKind::rf, ClassifierKind::lr}) {
        ClassifierConfig cfg;
        cfg.kind = kind;
        cfg.mlp_epochs = 40;
        cfg.n_trees = 8;
        AttackModel m = fit(x, y, cfg, 9);
        std::string path = gpia::testing::temp_dir("clf") + "/" +
                           classifier_to_string(kind) + ".json";
        save_classifier(m, path);
        AttackModel r = load_classifier(path);
        auto [lm, sm] = predict(m, probe);
        auto [lr_, sr] = predict(r, probe);
        CHECK(lm == lr_);
        CHECK((sm - sr).cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("classifier config validation") {
    ClassifierConfig cfg;
    cfg.n_trees = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = ClassifierConfig{};
    cfg.tol = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = ClassifierConfig{};
    nlohmann::json j = cfg.to_json();
    j["mystery"] = 1;
    CHECK_THROWS_AS(ClassifierConfig::from_json(j), ParseError);
    ClassifierConfig round = ClassifierConfig::from_json(cfg.to_json());
    CHECK(round.mlp_layers == cfg.mlp_layers);
    CHECK(round.C == cfg.C);
}
