#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace gpia {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class Comparator { lt, le, gt, ge, eq, ne };
enum class PropertyLevel { node, link };

Comparator comparator_from_string(const std::string& s);
std::string comparator_to_string(Comparator c);

// Group membership test for a property. Node level names a single value of
// the property column; link level classifies an edge by its two endpoint
// values: same-value, different-value, or one explicit unordered value pair.
struct GroupPredicate {
    enum class Kind { value, same, diff, pair };
    Kind kind = Kind::value;
    int value = 0;
    std::array<int, 2> pair{0, 0};

    bool matches_node(int v) const;
    bool matches_link(int a, int b) const;
    bool operator==(const GroupPredicate& o) const;
};

struct PropertySpec {
    PropertyLevel level = PropertyLevel::node;
    GroupPredicate lhs, rhs;
    Comparator cmp = Comparator::gt;
    int property_col = 0;

    static PropertySpec from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
    void validate() const;

    static PropertySpec node_count(int lhs_value, int rhs_value, Comparator c, int col);
};

// Undirected simple graph with dense node features. `property_values` is the
// declared value set of the property column, carried so that subgraphs with a
// vanished group still evaluate properties instead of erroring.
struct Graph {
    int n = 0;
    std::vector<std::pair<int, int>> edges;  // u < v, sorted, unique
    Matrix features;                         // n x d
    std::vector<int> labels;                 // class indices in [0, classes)
    int property_col = 0;
    std::vector<int> property_values;        // sorted distinct declared codes

    int num_features() const { return static_cast<int>(features.cols()); }
    int property_value(int node) const;
    bool has_edge(int u, int v) const;
    std::vector<std::vector<int>> adjacency() const;
    void validate() const;
    // Induced subgraph on `nodes` (must be sorted distinct ids); row i of the
    // result corresponds to nodes[i].
    Graph induced(const std::vector<int>& nodes) const;
};

Graph load_graph(const std::string& edge_path, const std::string& feature_path,
                 int property_col);
void save_graph(const Graph& g, const std::string& edge_path,
                const std::string& feature_path);

bool evaluate_property(const Graph& g, const PropertySpec& p);
// (lhs count, rhs count) under p; exposed for baselines.
std::pair<long, long> property_counts(const Graph& g, const PropertySpec& p);
bool compare_counts(long lhs, long rhs, Comparator c);
double group_size_ratio(const Graph& g, const PropertySpec& p);

struct SubgraphSample {
    std::vector<int> node_ids;  // sorted parent ids; graph row i == node_ids[i]
    Graph graph;
    int parent_id = 0;
    bool flag = false;
};

// Uniform node subsets with induced edges, rejected until the property flag
// matches want_flag. Budget: 50 attempts per sample, then SamplingError
// advising densify. `pool` restricts the candidate nodes (default all).
std::vector<SubgraphSample> sample_subgraphs(
    const Graph& g, int count, int size, bool want_flag, const PropertySpec& p,
    std::uint64_t seed, const std::vector<int>* pool = nullptr);

// Stratified variant for planted fixtures: draws round(ratio*size) nodes from
// the lhs group and the rest from its complement (uniformly within each),
// nudging the lhs count by one node per retry when the drawn subset misses
// want_flag. Node-level properties only.
std::vector<SubgraphSample> sample_subgraphs_planted(
    const Graph& g, int count, int size, bool want_flag, const PropertySpec& p,
    double ratio, std::uint64_t seed, const std::vector<int>* pool = nullptr);

struct OverlapReport {
    double node_overlap = 0.0;  // fraction of test nodes found in any train sample
    long shared_edges = 0;      // edges appearing on both sides
    int train_size = 0;
    int test_size = 0;
};

struct SplitResult {
    std::vector<SubgraphSample> train, test;
    std::vector<int> train_idx, test_idx;
    OverlapReport report;
};

// Class-balanced split. Samples sharing an edge (when forbid_link_overlap) or
// sharing a node (when max_node_overlap == 0) are locked to the same side;
// assignment is retried with reshuffled component orders until the realized
// node overlap fits the budget, else SplitError.
SplitResult split_train_test(const std::vector<SubgraphSample>& samples,
                             double train_frac, double max_node_overlap,
                             bool forbid_link_overlap, std::uint64_t seed);

// Adds uniformly random absent edges (without replacement) until target_flag
// holds or extra_edges were added; DensifyError when the budget runs out or no
// edge can be added.
SubgraphSample densify(const SubgraphSample& s, int extra_edges,
                       const PropertySpec& p, bool target_flag,
                       std::uint64_t seed);

// Synthetic generator. Feature layout: column 0 = property code in {0,1}
// drawn Bernoulli(group_ratio); column 1 = correlated code, equal to the
// property value with probability (1+rho)/2; columns 2..5 standard normal.
// Edges prefer same-group endpoints with probability `homophily`; labels are
// a function of the non-property columns, flipped with label_noise.
struct SyntheticConfig {
    int n = 1000;
    double group_ratio = 0.5;
    double rho = 0.0;
    double homophily = 0.5;
    double avg_degree = 8.0;
    double label_noise = 0.1;
    int classes = 2;
    std::uint64_t seed = 0;

    static SyntheticConfig from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
    void validate() const;
};

Graph generate_synthetic(const SyntheticConfig& cfg);

}  // namespace gpia
