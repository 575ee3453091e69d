#include "doctest.h"

#include <cmath>
#include <vector>

#include "gpia/errors.hpp"
#include "gpia/gnn.hpp"
#include "helpers.hpp"

using namespace gpia;
using gpia::testing::tiny_graph;

namespace {

// Scalar parameter slots in the documented flattening order: layers
// ascending, W row-major, then per GAT head a_src followed by a_dst.
std::vector<double*> parameter_slots(GnnModel& m) {
    std::vector<double*> out;
    for (std::size_t l = 0; l < m.W.size(); ++l) {
        Matrix& w = m.W[l];
        for (Eigen::Index r = 0; r < w.rows(); ++r)
            for (Eigen::Index c = 0; c < w.cols(); ++c) out.push_back(&w(r, c));
        if (l < m.a_src.size()) {
            for (std::size_t h = 0; h < m.a_src[l].size(); ++h) {
                Vector& a = m.a_src[l][h];
                for (Eigen::Index i = 0; i < a.size(); ++i) out.push_back(&a(i));
                Vector& b = m.a_dst[l][h];
                for (Eigen::Index i = 0; i < b.size(); ++i) out.push_back(&b(i));
            }
        }
    }
    return out;
}

// Centered finite differences on masked_loss, never touching the analytic
// backward path.
void check_against_fd(GnnModel m, const Graph& g, const std::vector<int>& mask,
                      std::optional<std::uint64_t> sage_seed) {
    Vector analytic = gradient_vector(m, g, mask, sage_seed);
    std::vector<double*> slots = parameter_slots(m);
    REQUIRE(static_cast<Eigen::Index>(slots.size()) == analytic.size());
    const double h = 1e-5;
    for (std::size_t i = 0; i < slots.size(); ++i) {
        double orig = *slots[i];
        *slots[i] = orig + h;
        double up = masked_loss(m, g, mask, sage_seed);
        *slots[i] = orig - h;
        double down = masked_loss(m, g, mask, sage_seed);
        *slots[i] = orig;
        double fd = (up - down) / (2.0 * h);
        double tol = 2e-6 * std::max(1.0, std::abs(fd));
        CHECK(std::abs(fd - analytic(static_cast<Eigen::Index>(i))) < tol);
    }
}

}  // namespace

TEST_CASE("gcn gradient matches finite differences") {
    Graph g = tiny_graph();
    GnnConfig cfg;
    cfg.arch = Arch::gcn;
    cfg.hidden_layers = 2;
    cfg.hidden_dim = 4;
    cfg.classes = 3;
    cfg.seed = 5;
    GnnModel m = init_model(g, cfg);
    check_against_fd(m, g, {0, 2, 3, 5, 7}, std::nullopt);
    check_against_fd(m, g, {4}, std::nullopt);
}

TEST_CASE("sage gradient matches finite differences under a frozen draw") {
    Graph g = tiny_graph();
    GnnConfig cfg;
    cfg.arch = Arch::sage;
    cfg.hidden_layers = 2;
    cfg.hidden_dim = 4;
    cfg.classes = 3;
    cfg.sage_neighbors = 2;
    cfg.seed = 6;
    GnnModel m = init_model(g, cfg);
    check_against_fd(m, g, {0, 1, 2, 6, 7}, 777);
    check_against_fd(m, g, {0, 1, 2, 6, 7}, std::nullopt);  // inference stream
}

TEST_CASE("gat gradient matches finite differences") {
    Graph g = tiny_graph();
    GnnConfig cfg;
    cfg.arch = Arch::gat;
    cfg.hidden_layers = 2;
    cfg.hidden_dim = 4;
    cfg.gat_heads = 2;
    cfg.classes = 3;
    cfg.seed = 7;
    GnnModel m = init_model(g, cfg);
    check_against_fd(m, g, {0, 2, 3, 5, 7}, std::nullopt);
}

TEST_CASE("gat single-head and width-one configurations also check out") {
    Graph g = tiny_graph();
    GnnConfig cfg;
    cfg.arch = Arch::gat;
    cfg.hidden_layers = 1;
    cfg.hidden_dim = 4;
    cfg.gat_heads = 4;  // head width 1
    cfg.classes = 3;
    cfg.seed = 9;
    GnnModel m = init_model(g, cfg);
    check_against_fd(m, g, {1, 4, 6}, std::nullopt);

    cfg.gat_heads = 1;
    GnnModel m1 = init_model(g, cfg);
    check_against_fd(m1, g, {1, 4, 6}, std::nullopt);
}

TEST_CASE("gradient order matches the documented flattening") {
    // Perturbing the very first W entry must move the very first gradient
    // coordinate; likewise the last slot. Guards against order drift between
    // gradient_vector and parameter_slots.
    Graph g = tiny_graph();
    GnnConfig cfg;
    cfg.arch = Arch::gat;
    cfg.hidden_layers = 1;
    cfg.hidden_dim = 4;
    cfg.gat_heads = 2;
    cfg.classes = 3;
    cfg.seed = 11;
    GnnModel m = init_model(g, cfg);
    std::vector<int> mask = {0, 1, 2, 3, 4, 5, 6, 7};
    std::vector<double*> slots = parameter_slots(m);
    Vector base = gradient_vector(m, g, mask);
    const double h = 1e-5;
    for (std::size_t probe : {std::size_t{0}, slots.size() - 1}) {
        double orig = *slots[probe];
        *slots[probe] = orig + h;
        double up = masked_loss(m, g, mask);
        *slots[probe] = orig - h;
        double down = masked_loss(m, g, mask);
        *slots[probe] = orig;
        double fd = (up - down) / (2.0 * h);
        CHECK(std::abs(fd - base(static_cast<Eigen::Index>(probe))) <
              2e-6 * std::max(1.0, std::abs(fd)));
    }
}
