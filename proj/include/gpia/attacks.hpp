#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "gpia/classifiers.hpp"
#include "gpia/features.hpp"
#include "gpia/gnn.hpp"
#include "gpia/graph.hpp"

namespace gpia {

// A1/A3/A5 read per-layer embeddings (white box), A2/A4/A6 read posteriors
// (black box). A1/A2 sample shadow training graphs from the partial graph,
// A3/A4 from the shadow graph, A5/A6 from both at the knowledge mix ratio.
enum class AttackId { A1, A2, A3, A4, A5, A6 };

AttackId attack_from_string(const std::string& s);
std::string attack_to_string(AttackId id);
bool is_white_box(AttackId id);
bool uses_partial(AttackId id);
bool uses_shadow(AttackId id);

enum class Access { white, black };
Access access_from_string(const std::string& s);
std::string access_to_string(Access a);

// partial:shadow sample count ratio for A5/A6; only the seven canonical
// ratios are accepted.
struct MixRatio {
    int partial = 1, shadow = 1;

    static MixRatio from_string(const std::string& s);
    std::string to_string() const;
    void validate() const;
};

// (partial count, shadow count) summing to train_count at the given ratio.
std::pair<int, int> mix_counts(int train_count, const MixRatio& mr);

struct AdversaryKnowledge {
    std::optional<Graph> partial_graph;
    // Target-graph ids of the partial graph's rows, when the partial graph
    // was carved from the target. Enables cross-side overlap accounting and
    // disjoint test pools; without it test samples are drawn from the full
    // target node set and overlap is not measured.
    std::optional<std::vector<int>> partial_nodes;
    std::optional<Graph> shadow_graph;
    Access access = Access::black;
    MixRatio mix_ratio;

    void validate() const;
};

// Carves a node-induced partial graph of round(fraction*n) nodes; second
// member is the chosen (sorted) target node ids.
std::pair<Graph, std::vector<int>> sample_partial(const Graph& g,
                                                  double fraction,
                                                  std::uint64_t seed);

// Stratified sampling ratios for planted fixtures: positive samples draw
// round(pos*size) lhs-group nodes, negatives round(neg*size).
struct PlantedRatios {
    double pos = 0.7;
    double neg = 0.3;
};

struct AttackCounts {
    int train = 700;
    int test = 300;
};

struct AttackSpec {
    AttackId id = AttackId::A2;
    std::vector<int> layers;  // 1-based hidden layer indices, white box only
    Aggregation aggregation = Aggregation::posterior_concat;
    AlignmentParams alignment;
    ClassifierConfig classifier;
    PropertySpec property;
    AttackCounts counts;
    // Each sampled subgraph takes this fraction of its source graph's nodes.
    double sample_fraction = 0.25;
    double max_node_overlap = 0.05;
    std::optional<PlantedRatios> planted;

    void validate() const;
    // Table-4 gating; throws KnowledgeError before any training happens.
    void check_knowledge(const AdversaryKnowledge& k) const;
    std::string fingerprint() const;

    static AttackSpec from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

// Trained per-sample model outputs on both pipeline sides. node_ids of
// partial-sourced train samples are translated to target ids when the
// knowledge carries partial_nodes; comparable_ids records whether both
// sides share the target id space. eval_masks hold each sample's held-out
// 20% node split, kept for defended-target accuracy measurements.
struct ShadowOutputs {
    std::vector<SubgraphSample> train_samples, test_samples;
    std::vector<EmbeddingSet> train_outputs, test_outputs;
    std::vector<std::vector<int>> train_eval_masks, test_eval_masks;
    bool comparable_ids = false;
};

// Train side only: samples balanced subgraphs from the knowledge graphs and
// trains one model per subgraph with target_cfg.
ShadowOutputs build_shadow_outputs(const AdversaryKnowledge& k,
                                   const AttackSpec& spec,
                                   const GnnConfig& target_cfg,
                                   std::uint64_t seed);

// Both sides. Test samples come from the target graph: same node count as
// train samples for A1/A2/A5/A6 (drawn from the pool disjoint from train
// nodes when possible, else rejected on link overlap and checked against
// max_node_overlap), round(sample_fraction*n) for A3/A4. The perturbation
// hook trains every sample (or only target-side samples) with per-sample
// seeded gradient noise; used by the dp_train defense.
ShadowOutputs build_attack_outputs(const AttackSpec& spec,
                                   const AdversaryKnowledge& k,
                                   const Graph& target_graph,
                                   const GnnConfig& target_cfg,
                                   std::uint64_t seed,
                                   const GradientPerturb* perturb = nullptr,
                                   bool perturb_target_only = false);

struct AttackDataset {
    Matrix train_X, test_X;
    std::vector<int> train_y, test_y;
    OverlapReport overlap;
    int feature_len = 0;
};

// Aggregates each sample's outputs and aligns the two sides when their
// feature lengths differ; labels are the sample flags.
AttackDataset assemble_dataset(const ShadowOutputs& outs,
                               const AttackSpec& spec, std::uint64_t seed);

struct AttackResult {
    std::string fingerprint;
    double accuracy = 0.0;
    std::vector<int> predictions;
    std::vector<int> truth;
    Vector scores;
    std::uint64_t seed = 0;
};

// Dataset assembly, classifier fit and test evaluation over prebuilt
// outputs; split out so defenses can transform outputs first.
AttackResult evaluate_outputs(const ShadowOutputs& outs, const AttackSpec& spec,
                              std::uint64_t seed);

AttackResult run_attack(const AttackSpec& spec, const AdversaryKnowledge& k,
                        const Graph& target_graph, const GnnConfig& target_cfg,
                        std::uint64_t seed);

nlohmann::json result_json(const AttackSpec& spec, const AttackResult& r);
// One row per test sample: sample,prediction,score,truth.
void export_predictions_csv(const AttackResult& r, const std::string& path);

// Threshold over {-inf} + midpoints of sorted distinct values + {+inf}
// maximizing accuracy of "value >= threshold predicts positive" on flags;
// ties pick the smallest candidate. Shared by baselines 4 and 5.
double best_threshold(const std::vector<double>& values,
                      const std::vector<int>& flags);

// Baseline-1: node-level classifier predicts each node's property value,
// the property is then evaluated on the predicted counts. Requires a binary
// declared value set.
AttackResult baseline_aia(const Matrix& node_X,
                          const std::vector<int>& node_values,
                          const std::vector<SubgraphSample>& targets,
                          const std::vector<Matrix>& target_node_X,
                          const PropertySpec& p, std::uint64_t seed);

// Baseline-2: 2-means with seeded restarts, clusters labeled by majority
// training label, test rows take the nearer centroid's label.
AttackResult baseline_kmeans(const Matrix& train_X,
                             const std::vector<int>& train_y,
                             const Matrix& test_X,
                             const std::vector<int>& test_y,
                             std::uint64_t seed);

// Baseline-3: MLP/RF/LR fit on one stratified half, their scores on the
// other half train a logistic meta-model.
AttackResult baseline_meta(const Matrix& train_X,
                           const std::vector<int>& train_y,
                           const Matrix& test_X,
                           const std::vector<int>& test_y,
                           std::uint64_t seed);

// Baseline-4: thresholds the group size ratio of flagged knowledge graphs.
AttackResult baseline_dsad(const std::vector<SubgraphSample>& knowledge,
                           const std::vector<SubgraphSample>& targets,
                           const PropertySpec& p);

// Baseline-5: thresholds the train-test loss gap of models trained per
// sample with cfg.
AttackResult baseline_lossgap(const std::vector<SubgraphSample>& knowledge,
                              const std::vector<SubgraphSample>& targets,
                              const GnnConfig& cfg, std::uint64_t seed);

}  // namespace gpia
