#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "gpia/gnn.hpp"
#include "gpia/graph.hpp"

namespace gpia {

enum class ElementKind { node, edge };

ElementKind element_from_string(const std::string& s);
std::string to_string(ElementKind k);

struct InfluenceReport {
    ElementKind kind = ElementKind::node;
    std::vector<double> scores;  // per element, node id order or edge order
    std::vector<int> groups;     // 0 lhs, 1 rhs, -1 neither
    double lhs_mean = 0.0, rhs_mean = 0.0;
    int lhs_count = 0, rhs_count = 0;
};

struct GroupMetrics {
    double loss = 0.0;
    double accuracy = 0.0;
    int count = 0;
};

struct DisparityReport {
    GroupMetrics lhs, rhs;
    double loss_gap = 0.0;  // signed, lhs minus rhs
};

struct GapBucket {
    std::string label;
    double mean_gap = 0.0;
    double mean_accuracy = 0.0;
    int count = 0;
};

// 1 - cosine similarity, clamped to [0, 2]. Two zero vectors count as
// identical; a single zero vector counts as maximally unrelated (1).
double cosine_distance(const Vector& a, const Vector& b);

// Retrains without the element under the same model seed and compares the
// loss gradients of both runs at their best-epoch parameters. Both runs
// share one 80/20 mask drawn from `seed`; the ablated run drops the removed
// node from the masks and reindexes.
double influence_node(const Graph& g, int v, const GnnConfig& cfg,
                      std::uint64_t seed);
double influence_edge(const Graph& g, std::pair<int, int> e,
                      const GnnConfig& cfg, std::uint64_t seed);

// Influence of every node (or edge) plus per-group means. One full-graph
// training is shared; ablated retrainings run in parallel.
InfluenceReport influence_report(const Graph& g, const PropertySpec& p,
                                 ElementKind kind, const GnnConfig& cfg,
                                 std::uint64_t seed);

// Per-group mean cross entropy and accuracy over `mask`, grouped by the
// node-level property predicates. loss_gap = L_lhs - L_rhs.
DisparityReport group_metrics(const GnnModel& m, const Graph& g,
                              const PropertySpec& p,
                              const std::vector<int>& mask);

// Trains one model per graph and reports |mean held-out loss over the
// positive side - mean over the negative side|. Index i on either side uses
// the same mask sub-seed, so identical sides gap to exactly zero.
double loss_gap_pos_neg(const std::vector<Graph>& pos,
                        const std::vector<Graph>& neg, const GnnConfig& cfg,
                        std::uint64_t seed);

double pearson(const std::vector<double>& x, const std::vector<double>& y);

// Sorts by gap ascending and splits into four buckets ("Top-25%" holds the
// smallest gaps). Sizes differ by at most one; remainders go to the front.
std::vector<GapBucket> gap_buckets(
    const std::vector<std::pair<double, bool>>& samples);

// t-SNE to 2 dims; writes an x,y,flag CSV and returns the coordinates.
Matrix export_distribution(const std::vector<Vector>& features,
                           const std::vector<int>& flags, std::uint64_t seed,
                           const std::string& path);

void export_influence_csv(const InfluenceReport& r, const std::string& path);
void export_gap_table_csv(const std::vector<GapBucket>& rows,
                          const std::string& path);

}  // namespace gpia
