#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "gpia/graph.hpp"

namespace gpia {

enum class Arch { gcn, sage, gat };

Arch arch_from_string(const std::string& s);
std::string arch_to_string(Arch a);

struct GnnConfig {
    Arch arch = Arch::gcn;
    int hidden_layers = 2;  // in [1, 8]
    int hidden_dim = 64;
    int classes = 2;
    int sage_neighbors = 10;
    int gat_heads = 4;
    double lr = 0.01;
    int max_epochs = 1500;
    int patience = 50;
    std::uint64_t seed = 0;

    void validate() const;
    static GnnConfig from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

// Trained parameters. Layer l maps its input (features for l=0, hidden_dim
// after) to hidden_dim; the final layer maps to `classes`. GraphSAGE weights
// take the concatenated [self, neighbor-mean] input, so their row count is
// twice the layer input dim. GAT holds per-head weight slices inside W plus
// per-head attention vectors a_src/a_dst (the two halves of the usual a).
struct GnnModel {
    GnnConfig cfg;
    int in_dim = 0;
    std::vector<Matrix> W;  // gcn/sage: one per layer; gat: head slices as column blocks
    std::vector<std::vector<Vector>> a_src, a_dst;  // gat: [layer][head]
    int trained_epochs = 0;

    nlohmann::json to_json() const;
    static GnnModel from_json(const nlohmann::json& j);
};

struct EmbeddingSet {
    std::vector<Matrix> Z;  // Z^1..Z^L, each n x hidden_dim
    Matrix O;               // n x classes, rows sum to 1
};

struct TrainReport {
    std::vector<double> train_loss, test_loss, train_acc, test_acc;
    int best_epoch = 0;
    std::string stop_reason;  // "patience" | "max_epochs"
};

Matrix normalize_adjacency(const Graph& g);

GnnModel init_model(const Graph& g, const GnnConfig& cfg);

// Forward pass. sage_seed controls GraphSAGE neighbor draws; when absent the
// inference-frozen stream derived from cfg.seed is used. Ignored by GCN/GAT.
EmbeddingSet forward(const GnnModel& m, const Graph& g,
                     std::optional<std::uint64_t> sage_seed = std::nullopt);

std::pair<GnnModel, TrainReport> train(const Graph& g, const GnnConfig& cfg,
                                       const std::vector<int>& train_mask,
                                       const std::vector<int>& test_mask);

// Flat gradient of the masked mean cross-entropy at m's current parameters.
// Parameter order: layers ascending; within a layer, W row-major, then for
// GAT each head's a_src followed by a_dst. GraphSAGE uses the
// inference-frozen neighbor samples (or sage_seed when given).
Vector gradient_vector(const GnnModel& m, const Graph& g,
                       const std::vector<int>& mask,
                       std::optional<std::uint64_t> sage_seed = std::nullopt);

double masked_loss(const GnnModel& m, const Graph& g,
                   const std::vector<int>& mask,
                   std::optional<std::uint64_t> sage_seed = std::nullopt);
double masked_accuracy(const GnnModel& m, const Graph& g,
                       const std::vector<int>& mask,
                       std::optional<std::uint64_t> sage_seed = std::nullopt);

// Deterministic helper: shuffles node ids by seed and splits them
// train_frac / rest. Used wherever a caller has no explicit masks.
std::pair<std::vector<int>, std::vector<int>> make_masks(int n, double train_frac,
                                                         std::uint64_t seed);

void save_model(const GnnModel& m, const std::string& path);
GnnModel load_model(const std::string& path);

// Internal hook shared with dp_train: per-epoch gradient post-processing.
struct GradientPerturb {
    double clip = 0.0;     // 0 disables clipping
    double noise_b = 0.0;  // Laplace scale, 0 disables noise
    std::uint64_t seed = 0;
};

std::pair<GnnModel, TrainReport> train_with_perturbation(
    const Graph& g, const GnnConfig& cfg, const std::vector<int>& train_mask,
    const std::vector<int>& test_mask, const GradientPerturb* perturb);

}  // namespace gpia
