#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "gpia/graph.hpp"

namespace gpia {

enum class ClassifierKind { mlp, rf, lr };

ClassifierKind classifier_from_string(const std::string& s);
std::string classifier_to_string(ClassifierKind k);

struct ClassifierConfig {
    ClassifierKind kind = ClassifierKind::mlp;
    std::vector<int> mlp_layers = {64, 32, 16};
    int mlp_epochs = 1000;
    double mlp_lr = 0.001;
    int n_trees = 100;
    int max_depth = 150;
    int min_leaf = 1;
    double C = 1.0;      // inverse L2 strength for lr
    int max_iter = 100;
    double tol = 1e-4;

    void validate() const;
    static ClassifierConfig from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

struct RfNode {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    int left = -1, right = -1;  // indices into the tree's node list
    double value = 0.0;         // positive fraction at this node
};

struct AttackModel {
    ClassifierConfig cfg;
    int in_dim = 0;
    // mlp
    std::vector<Matrix> W;
    std::vector<Vector> b;
    // rf: preorder node lists
    std::vector<std::vector<RfNode>> trees;
    // lr
    Vector coef;
    double intercept = 0.0;

    nlohmann::json to_json() const;
    static AttackModel from_json(const nlohmann::json& j);
};

// Binary classification fit; y entries must be 0/1 with both classes present.
AttackModel fit(const Matrix& X, const std::vector<int>& y,
                const ClassifierConfig& cfg, std::uint64_t seed);

// labels are score >= 0.5; empty X yields empty outputs.
std::pair<std::vector<int>, Vector> predict(const AttackModel& m,
                                            const Matrix& X);

double attack_accuracy(const std::vector<int>& pred,
                       const std::vector<int>& truth);

void save_classifier(const AttackModel& m, const std::string& path);
AttackModel load_classifier(const std::string& path);

}  // namespace gpia
