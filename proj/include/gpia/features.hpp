#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "gpia/graph.hpp"

namespace gpia {

enum class Aggregation {
    posterior_concat,
    posterior_ewd,
    embed_concat,
    embed_maxpool,
    embed_meanpool,
};

Aggregation aggregation_from_string(const std::string& s);
std::string aggregation_to_string(Aggregation a);
bool is_posterior_aggregation(Aggregation a);

struct FeatureSource {
    Aggregation method = Aggregation::posterior_concat;
    std::vector<int> layers;  // embedding layer indices used, empty for posteriors
    int sample_id = 0;
};

struct FeatureVector {
    Vector values;
    FeatureSource source;
};

// Average absolute difference over ordered entry pairs of one posterior row.
double ewd_per_node(const Vector& p);

FeatureVector aggregate_posteriors(const Matrix& O, Aggregation m);
// Zs are the selected layers' embedding matrices; they are column-concatenated
// per node before concat/pooling.
FeatureVector aggregate_embeddings(const std::vector<Matrix>& Zs, Aggregation m);

enum class Alignment { sampling, tsne, pca, autoencoder };

Alignment alignment_from_string(const std::string& s);
std::string alignment_to_string(Alignment a);

struct AlignmentParams {
    Alignment method = Alignment::sampling;
    double perplexity = 30.0;  // tsne cap; effective value is min(perplexity, m/4)
    int iterations = 1000;     // tsne gradient steps
    double retained_variance = 0.95;  // pca, used when k == 0
    int k = 0;                        // pca explicit component count

    void validate() const;
    static AlignmentParams from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

// Brings both sides to a common vector length. Sampling truncates the longer
// side by one seeded index subset; tsne embeds the union jointly into 2 dims;
// pca fits on train and projects both; autoencoder compresses only the
// longer-dimension side. When tsne/pca meet unequal lengths the longer side
// is first truncated by the sampling rule.
std::pair<std::vector<FeatureVector>, std::vector<FeatureVector>> align(
    const std::vector<FeatureVector>& train,
    const std::vector<FeatureVector>& test, const AlignmentParams& params,
    std::uint64_t seed);

// Exact t-SNE, symmetric affinities, momentum gradient descent, PCA init.
Matrix tsne(const Matrix& X, double perplexity, int iters, std::uint64_t seed);

struct Pca {
    Vector mean;
    Matrix components;  // k x d, orthonormal rows
    Vector explained;   // variance captured per component

    Matrix project(const Matrix& X) const;
    Matrix reconstruct(const Matrix& Y) const;
};

Pca fit_pca(const Matrix& X, int k);
Pca fit_pca_variance(const Matrix& X, double retained);

// One ReLU code layer, linear decoder, MSE; returns the learned codes for X.
Matrix autoencode(const Matrix& X, int target_dim, std::uint64_t seed,
                  int epochs = 500, double lr = 0.001);

// One vector per row, label column last.
void export_features_csv(const std::vector<FeatureVector>& rows,
                         const std::vector<int>& labels,
                         const std::string& path);

}  // namespace gpia
