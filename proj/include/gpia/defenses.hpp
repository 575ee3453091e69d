#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "gpia/attacks.hpp"
#include "gpia/gnn.hpp"
#include "gpia/graph.hpp"

namespace gpia {

enum class DefenseMethod {
    noisy_posterior,
    noisy_embedding,
    truncation,
    dp_gradient,
    topk_posterior,
    label_only,
};

DefenseMethod defense_from_string(const std::string& s);
std::string to_string(DefenseMethod m);

// Embedding defenses pair with white-box attacks, posterior defenses with
// black-box ones; dp-gradient retrains the models and works with either.
bool is_embedding_defense(DefenseMethod m);
bool is_posterior_defense(DefenseMethod m);

struct DefenseSpec {
    DefenseMethod method = DefenseMethod::noisy_posterior;
    double b = 1.0;                 // Laplace scale for the noise methods
    std::vector<int> target_layers; // 1-based Z layers to perturb or truncate
    double r = 0.1;                 // truncation ratio
    int k = 1;                      // kept entries for topk-posterior
    double epsilon = 1.0;           // dp-gradient privacy knob, noise b = clip/epsilon
    double clip = 1.0;              // dp-gradient gradient norm bound
    std::uint64_t seed = 0;
    // When set, shadow-side outputs stay clean and only the target-side
    // models are defended.
    bool defend_target_only = false;

    void validate() const;
    // The scalar the sweep table reports for this method.
    double param() const;
    std::string fingerprint() const;
    static DefenseSpec from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

struct DefenseResult {
    std::string fingerprint;
    double attack_accuracy = 0.0;
    double target_accuracy = 0.0;
};

// Returns M plus i.i.d. Laplace(0, b) on every entry. No renormalization or
// clipping; defended posteriors are released raw.
Matrix laplace_noise(const Matrix& M, double b, std::uint64_t seed);

// Keeps a per-node random subset of floor(d*(1-r)) dimensions, original
// order preserved. Different nodes generally keep different subsets.
Matrix truncate_embeddings(const Matrix& Z, double r, std::uint64_t seed);

// Zeroes all but the k largest entries per row; ties keep the lower index.
Matrix topk_posteriors(const Matrix& O, int k);

// Per-row argmax, ties to the lower index.
std::vector<int> label_only(const Matrix& O);

// One-hot rows of label_only(O); what a label-only deployment leaks.
Matrix label_only_posteriors(const Matrix& O);

// Trains with an 80/20 seeded split, norm-clipping the full gradient to
// `clip` and adding Laplace(0, clip/epsilon) per coordinate each epoch.
std::pair<GnnModel, TrainReport> dp_train(const Graph& g, const GnnConfig& cfg,
                                          double epsilon, double clip,
                                          std::uint64_t seed);

// Applies an output defense (not dp-gradient) to the recorded model outputs.
// Shadow side is skipped when defend_target_only is set.
ShadowOutputs apply_output_defense(const ShadowOutputs& outs,
                                   const DefenseSpec& d);

// Mean node-classification accuracy of the target-side models on their held
// out masks, read off the recorded posteriors by argmax.
double mean_target_accuracy(const ShadowOutputs& outs);

// Full pipeline: builds the attack outputs, defends them, runs the attack,
// and reports both accuracies.
DefenseResult evaluate_defense(const DefenseSpec& d, const AttackSpec& attack,
                               const AdversaryKnowledge& knowledge,
                               const Graph& target, const GnnConfig& target_cfg,
                               std::uint64_t seed);

}  // namespace gpia
