#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <set>

#include "gpia/errors.hpp"
#include "gpia/gnn.hpp"
#include "helpers.hpp"

using namespace gpia;
using gpia::testing::medium_graph;
using gpia::testing::temp_dir;
using gpia::testing::tiny_graph;

TEST_CASE("normalized adjacency against hand computation on a path") {
    Graph g;
    g.n = 3;
    g.edges = {{0, 1}, {1, 2}};
    g.features.resize(3, 1);
    g.features.setZero();
    g.labels = {0, 0, 0};
    g.property_values = {0};
    Matrix a = normalize_adjacency(g);
    // Degrees with self loops: 2, 3, 2.
    CHECK(a(0, 0) == doctest::Approx(0.5));
    CHECK(a(1, 1) == doctest::Approx(1.0 / 3.0));
    CHECK(a(2, 2) == doctest::Approx(0.5));
    CHECK(a(0, 1) == doctest::Approx(1.0 / std::sqrt(6.0)));
    CHECK(a(1, 0) == doctest::Approx(a(0, 1)));
    CHECK(a(0, 2) == 0.0);
    Matrix sym = a - a.transpose();
    CHECK(sym.cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("arch string round trip") {
    for (const char* s : {"gcn", "sage", "gat"})
        CHECK(arch_to_string(arch_from_string(s)) == s);
    CHECK(arch_from_string("graphsage") == Arch::sage);
    CHECK_THROWS_AS(arch_from_string("mlp"), ParseError);
}

TEST_CASE("config validation") {
    GnnConfig cfg;
    cfg.hidden_layers = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = GnnConfig{};
    cfg.hidden_layers = 9;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = GnnConfig{};
    cfg.arch = Arch::gat;
    cfg.hidden_dim = 30;
    cfg.gat_heads = 4;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.hidden_dim = 32;
    CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("embedding shapes and readout normalization") {
    Graph g = tiny_graph();
    for (Arch arch : {Arch::gcn, Arch::sage, Arch::gat}) {
        GnnConfig cfg;
        cfg.arch = arch;
        cfg.hidden_layers = 3;
        cfg.hidden_dim = 8;
        cfg.gat_heads = 2;
        cfg.classes = 3;
        cfg.seed = 12;
        GnnModel m = init_model(g, cfg);
        EmbeddingSet e = forward(m, g);
        REQUIRE(e.Z.size() == 3);
        for (const Matrix& z : e.Z) {
            CHECK(z.rows() == g.n);
            CHECK(z.cols() == 8);
        }
        CHECK(e.O.rows() == g.n);
        CHECK(e.O.cols() == 3);
        for (int i = 0; i < g.n; ++i) {
            CHECK(std::abs(e.O.row(i).sum() - 1.0) < 1e-9);
            CHECK(e.O.row(i).minCoeff() >= 0.0);
        }
    }
}

TEST_CASE("initialization is seed-deterministic") {
    Graph g = tiny_graph();
    GnnConfig cfg;
    cfg.arch = Arch::gat;
    cfg.hidden_dim = 4;
    cfg.gat_heads = 2;
    cfg.seed = 99;
    GnnModel a = init_model(g, cfg);
    GnnModel b = init_model(g, cfg);
    for (std::size_t l = 0; l < a.W.size(); ++l)
        CHECK((a.W[l] - b.W[l]).cwiseAbs().maxCoeff() == 0.0);
    cfg.seed = 100;
    GnnModel c = init_model(g, cfg);
    CHECK((a.W[0] - c.W[0]).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("forward determinism and sage sampling streams") {
    Graph g = medium_graph(30, 4);
    GnnConfig cfg;
    cfg.arch = Arch::sage;
    cfg.hidden_dim = 8;
    cfg.sage_neighbors = 2;
    cfg.seed = 3;
    GnnModel m = init_model(g, cfg);
    EmbeddingSet frozen1 = forward(m, g);
    EmbeddingSet frozen2 = forward(m, g);
    CHECK((frozen1.O - frozen2.O).cwiseAbs().maxCoeff() == 0.0);
    EmbeddingSet seeded = forward(m, g, 555);
    EmbeddingSet seeded2 = forward(m, g, 555);
    CHECK((seeded.O - seeded2.O).cwiseAbs().maxCoeff() == 0.0);
    EmbeddingSet other = forward(m, g, 556);
    CHECK((seeded.O - other.O).cwiseAbs().maxCoeff() > 0.0);

    GnnConfig gcfg = cfg;
    gcfg.arch = Arch::gcn;
    GnnModel gm = init_model(g, gcfg);
    EmbeddingSet e1 = forward(gm, g);
    EmbeddingSet e2 = forward(gm, g, 123);  // seed ignored by gcn
    CHECK((e1.O - e2.O).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("isolated nodes survive every architecture") {
    Graph g = tiny_graph();  // node 7 isolated
    for (Arch arch : {Arch::gcn, Arch::sage, Arch::gat}) {
        GnnConfig cfg;
        cfg.arch = arch;
        cfg.hidden_dim = 4;
        cfg.gat_heads = 2;
        cfg.classes = 3;
        cfg.seed = 8;
        GnnModel m = init_model(g, cfg);
        EmbeddingSet e = forward(m, g);
        CHECK(std::isfinite(e.O(7, 0)));
        CHECK(std::abs(e.O.row(7).sum() - 1.0) < 1e-9);
    }
}

TEST_CASE("training reduces loss and reports coherently") {
    Graph g = medium_graph(30, 4);
    auto [train_mask, test_mask] = make_masks(g.n, 0.7, 2);
    for (Arch arch : {Arch::gcn, Arch::sage, Arch::gat}) {
        CAPTURE(arch_to_string(arch));
        GnnConfig cfg;
        cfg.arch = arch;
        cfg.hidden_dim = 8;
        cfg.gat_heads = 2;
        cfg.sage_neighbors = 3;
        cfg.max_epochs = 60;
        cfg.patience = 60;
        cfg.seed = 4;
        auto [model, report] = train(g, cfg, train_mask, test_mask);
        REQUIRE(!report.train_loss.empty());
        CHECK(report.train_loss.size() == report.test_loss.size());
        CHECK(report.train_loss.size() == report.train_acc.size());
        CHECK(report.train_loss.back() < report.train_loss.front());
        CHECK(report.best_epoch >= 1);
        CHECK(report.best_epoch <= static_cast<int>(report.test_loss.size()));
        CHECK(model.trained_epochs == report.best_epoch);
        // best_epoch is the argmin of the test loss sequence.
        auto it = std::min_element(report.test_loss.begin(), report.test_loss.end());
        CHECK(report.best_epoch ==
              static_cast<int>(it - report.test_loss.begin()) + 1);
        CHECK((report.stop_reason == "patience" ||
               report.stop_reason == "max_epochs"));
        // Returned parameters are the best snapshot: loss at the frozen
        // stream equals the recorded best test loss.
        double reloaded = masked_loss(model, g, test_mask);
        CHECK(reloaded == doctest::Approx(*it).epsilon(1e-12));
    }
}

TEST_CASE("constant loss landscape stops after patience epochs") {
    Graph g = tiny_graph();
    g.features.setZero();  // zero features freeze the logits at zero
    g.labels = {0, 1, 0, 1, 0, 1, 0, 1};
    GnnConfig cfg;
    cfg.arch = Arch::gcn;
    cfg.hidden_dim = 4;
    cfg.classes = 2;
    cfg.max_epochs = 200;
    cfg.patience = 7;
    cfg.seed = 1;
    auto [model, report] = train(g, cfg, {0, 1, 2, 3}, {4, 5, 6, 7});
    CHECK(report.stop_reason == "patience");
    CHECK(report.best_epoch == 1);
    CHECK(static_cast<int>(report.test_loss.size()) == cfg.patience + 1);
    CHECK(report.test_loss.front() == doctest::Approx(std::log(2.0)));
    CHECK(report.test_loss.back() == doctest::Approx(report.test_loss.front()));
}

TEST_CASE("divergence raises with the epoch in the message") {
    Graph g = tiny_graph();
    GnnConfig cfg;
    cfg.arch = Arch::gcn;
    cfg.hidden_dim = 4;
    cfg.classes = 3;
    cfg.lr = 1e200;  // one step overflows the second layer product
    cfg.max_epochs = 10;
    cfg.seed = 3;
    CHECK_THROWS_WITH_AS(train(g, cfg, {0, 1, 2, 3}, {4, 5, 6}),
                         doctest::Contains("epoch"), DivergenceError);
}

TEST_CASE("mask preconditions") {
    Graph g = tiny_graph();
    GnnConfig cfg;
    cfg.hidden_dim = 4;
    cfg.classes = 3;
    cfg.max_epochs = 2;
    CHECK_THROWS_AS(train(g, cfg, {0, 1}, {1, 2}), PreconditionError);
    CHECK_THROWS_AS(train(g, cfg, {}, {1, 2}), PreconditionError);
    GnnModel m = init_model(g, cfg);
    CHECK_THROWS_AS(masked_loss(m, g, {99}), RangeError);
    Graph bad = g;
    bad.labels[0] = 7;
    CHECK_THROWS_AS(forward(m, bad), ConfigError);
}

TEST_CASE("feature dimension mismatch is rejected") {
    Graph g = tiny_graph();
    GnnConfig cfg;
    cfg.hidden_dim = 4;
    cfg.classes = 3;
    GnnModel m = init_model(g, cfg);
    Graph wider = g;
    wider.features.resize(g.n, 5);
    wider.features.setZero();
    CHECK_THROWS_AS(forward(m, wider), ConfigError);
}

TEST_CASE("model applies inductively to another graph of equal width") {
    Graph g = medium_graph(30, 4);
    GnnConfig cfg;
    cfg.hidden_dim = 8;
    cfg.classes = 2;
    cfg.seed = 5;
    GnnModel m = init_model(g, cfg);
    Graph h = medium_graph(12, 9);
    EmbeddingSet e = forward(m, h);
    CHECK(e.O.rows() == 12);
}

TEST_CASE("make_masks partitions the nodes") {
    auto [train, test] = make_masks(20, 0.7, 31);
    CHECK(train.size() == 14);
    CHECK(test.size() == 6);
    std::set<int> all(train.begin(), train.end());
    all.insert(test.begin(), test.end());
    CHECK(all.size() == 20);
    CHECK(*all.begin() == 0);
    CHECK(*all.rbegin() == 19);
    auto [t2, s2] = make_masks(20, 0.7, 31);
    CHECK(t2 == train);
    // Extreme fractions still leave both sides populated.
    auto [t3, s3] = make_masks(5, 0.999, 1);
    CHECK(!s3.empty());
}

TEST_CASE("save and load reproduce the forward pass bit for bit") {
    Graph g = tiny_graph();
    for (Arch arch : {Arch::gcn, Arch::sage, Arch::gat}) {
        GnnConfig cfg;
        cfg.arch = arch;
        cfg.hidden_dim = 4;
        cfg.gat_heads = 2;
        cfg.classes = 3;
        cfg.seed = 21;
        GnnModel m = init_model(g, cfg);
        m.trained_epochs = 17;
        std::string path =
            gpia::testing::temp_dir("model") + "/m_" + arch_to_string(arch) + ".json";
        save_model(m, path);
        GnnModel r = load_model(path);
        CHECK(r.trained_epochs == 17);
        CHECK(r.in_dim == m.in_dim);
        EmbeddingSet a = forward(m, g);
        EmbeddingSet b = forward(r, g);
        CHECK((a.O - b.O).cwiseAbs().maxCoeff() == 0.0);
        for (std::size_t i = 0; i < a.Z.size(); ++i)
            CHECK((a.Z[i] - b.Z[i]).cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("dp-style perturbation hook clips and stays trainable") {
    Graph g = medium_graph(24, 6);
    auto [train_mask, test_mask] = make_masks(g.n, 0.7, 3);
    GnnConfig cfg;
    cfg.hidden_dim = 8;
    cfg.max_epochs = 30;
    cfg.patience = 30;
    cfg.seed = 6;
    GradientPerturb pert;
    pert.clip = 0.5;
    pert.noise_b = 0.0;
    auto [model, report] = train_with_perturbation(g, cfg, train_mask, test_mask, &pert);
    CHECK(report.train_loss.back() < report.train_loss.front() + 1e-9);
    pert.noise_b = 0.05;
    pert.seed = 9;
    auto [m2, r2] = train_with_perturbation(g, cfg, train_mask, test_mask, &pert);
    CHECK(std::isfinite(r2.train_loss.back()));
    // Noise changes the trajectory.
    CHECK(r2.train_loss.back() != report.train_loss.back());
}
