#include "gpia/defenses.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include <nlohmann/json.hpp>

#include "gpia/errors.hpp"
#include "gpia/rng.hpp"

namespace gpia {

namespace {

// Per-sample noise streams; train and test sides must never share one.
constexpr std::uint64_t kDefendTrainBase = 0xde00000000ULL;
constexpr std::uint64_t kDefendTestBase = 0xdf00000000ULL;
constexpr std::uint64_t kDpMaskStream = 0xd7a0;
constexpr std::uint64_t kDpNoiseStream = 0xd7a1;
constexpr double kDpTrainFrac = 0.8;

std::string fmt(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%g", v);
    return buf;
}

int row_argmax(const Matrix& M, Eigen::Index i) {
    int best = 0;
    for (Eigen::Index j = 1; j < M.cols(); ++j)
        if (M(i, j) > M(i, best)) best = static_cast<int>(j);
    return best;
}

}  // namespace

DefenseMethod defense_from_string(const std::string& s) {
    if (s == "noisy-posterior") return DefenseMethod::noisy_posterior;
    if (s == "noisy-embedding") return DefenseMethod::noisy_embedding;
    if (s == "truncation") return DefenseMethod::truncation;
    if (s == "dp-gradient") return DefenseMethod::dp_gradient;
    if (s == "topk-posterior") return DefenseMethod::topk_posterior;
    if (s == "label-only") return DefenseMethod::label_only;
    throw ParseError("unknown defense method: " + s);
}

std::string to_string(DefenseMethod m) {
    switch (m) {
        case DefenseMethod::noisy_posterior: return "noisy-posterior";
        case DefenseMethod::noisy_embedding: return "noisy-embedding";
        case DefenseMethod::truncation: return "truncation";
        case DefenseMethod::dp_gradient: return "dp-gradient";
        case DefenseMethod::topk_posterior: return "topk-posterior";
        case DefenseMethod::label_only: return "label-only";
    }
    throw ParseError("unknown defense method enum");
}

bool is_embedding_defense(DefenseMethod m) {
    return m == DefenseMethod::noisy_embedding || m == DefenseMethod::truncation;
}

bool is_posterior_defense(DefenseMethod m) {
    return m == DefenseMethod::noisy_posterior ||
           m == DefenseMethod::topk_posterior || m == DefenseMethod::label_only;
}

void DefenseSpec::validate() const {
    if (method == DefenseMethod::noisy_posterior ||
        method == DefenseMethod::noisy_embedding) {
        if (b <= 0.0) throw PreconditionError("defense noise scale b must be > 0");
    }
    if (method == DefenseMethod::truncation) {
        if (r <= 0.0 || r >= 1.0)
            throw PreconditionError("truncation ratio must lie in (0, 1)");
    }
    if (is_embedding_defense(method)) {
        if (target_layers.empty())
            throw PreconditionError("embedding defense needs target_layers");
        for (std::size_t i = 0; i < target_layers.size(); ++i) {
            if (target_layers[i] < 1)
                throw PreconditionError("defense layers are 1-based");
            if (i > 0 && target_layers[i] <= target_layers[i - 1])
                throw PreconditionError("defense layers must be ascending");
        }
    }
    if (method == DefenseMethod::dp_gradient) {
        if (epsilon <= 0.0) throw PreconditionError("epsilon must be > 0");
        if (clip <= 0.0) throw PreconditionError("clip must be > 0");
    }
    if (method == DefenseMethod::topk_posterior && k < 1)
        throw PreconditionError("topk-posterior needs k >= 1");
}

double DefenseSpec::param() const {
    switch (method) {
        case DefenseMethod::noisy_posterior:
        case DefenseMethod::noisy_embedding: return b;
        case DefenseMethod::truncation: return r;
        case DefenseMethod::dp_gradient: return epsilon;
        case DefenseMethod::topk_posterior: return static_cast<double>(k);
        case DefenseMethod::label_only: return 0.0;
    }
    return 0.0;
}

std::string DefenseSpec::fingerprint() const {
    std::string f = to_string(method);
    switch (method) {
        case DefenseMethod::noisy_posterior:
            f += "|b=" + fmt(b);
            break;
        case DefenseMethod::noisy_embedding:
            f += "|b=" + fmt(b);
            break;
        case DefenseMethod::truncation:
            f += "|r=" + fmt(r);
            break;
        case DefenseMethod::dp_gradient:
            f += "|eps=" + fmt(epsilon) + "|clip=" + fmt(clip);
            break;
        case DefenseMethod::topk_posterior:
            f += "|k=" + std::to_string(k);
            break;
        case DefenseMethod::label_only:
            break;
    }
    if (is_embedding_defense(method)) {
        f += "|layers=";
        for (std::size_t i = 0; i < target_layers.size(); ++i) {
            if (i) f += ',';
            f += std::to_string(target_layers[i]);
        }
    }
    if (defend_target_only) f += "|target-only";
    return f;
}

DefenseSpec DefenseSpec::from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ParseError("defense spec must be an object");
    if (!j.contains("method")) throw ParseError("defense spec needs a method");
    DefenseSpec d;
    d.method = defense_from_string(j.at("method").get<std::string>());

    std::vector<std::string> allowed = {"method", "seed", "defend_target_only"};
    switch (d.method) {
        case DefenseMethod::noisy_posterior:
            allowed.push_back("b");
            break;
        case DefenseMethod::noisy_embedding:
            allowed.push_back("b");
            allowed.push_back("target_layers");
            break;
        case DefenseMethod::truncation:
            allowed.push_back("r");
            allowed.push_back("target_layers");
            break;
        case DefenseMethod::dp_gradient:
            allowed.push_back("epsilon");
            allowed.push_back("clip");
            break;
        case DefenseMethod::topk_posterior:
            allowed.push_back("k");
            break;
        case DefenseMethod::label_only:
            break;
    }
    for (auto it = j.begin(); it != j.end(); ++it)
        if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end())
            throw ParseError("defense spec: field '" + it.key() +
                             "' does not belong to method " +
                             to_string(d.method));

    auto need = [&](const char* key) -> const nlohmann::json& {
        if (!j.contains(key))
            throw ParseError(std::string("defense spec: method ") +
                             to_string(d.method) + " needs field '" + key + "'");
        return j.at(key);
    };
    switch (d.method) {
        case DefenseMethod::noisy_posterior:
        case DefenseMethod::noisy_embedding:
            d.b = need("b").get<double>();
            break;
        case DefenseMethod::truncation:
            d.r = need("r").get<double>();
            break;
        case DefenseMethod::dp_gradient:
            d.epsilon = need("epsilon").get<double>();
            if (j.contains("clip")) d.clip = j.at("clip").get<double>();
            break;
        case DefenseMethod::topk_posterior:
            d.k = need("k").get<int>();
            break;
        case DefenseMethod::label_only:
            break;
    }
    if (is_embedding_defense(d.method))
        d.target_layers = need("target_layers").get<std::vector<int>>();
    if (j.contains("seed")) d.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("defend_target_only"))
        d.defend_target_only = j.at("defend_target_only").get<bool>();
    d.validate();
    return d;
}

nlohmann::json DefenseSpec::to_json() const {
    nlohmann::json j;
    j["method"] = to_string(method);
    switch (method) {
        case DefenseMethod::noisy_posterior:
        case DefenseMethod::noisy_embedding:
            j["b"] = b;
            break;
        case DefenseMethod::truncation:
            j["r"] = r;
            break;
        case DefenseMethod::dp_gradient:
            j["epsilon"] = epsilon;
            j["clip"] = clip;
            break;
        case DefenseMethod::topk_posterior:
            j["k"] = k;
            break;
        case DefenseMethod::label_only:
            break;
    }
    if (is_embedding_defense(method)) j["target_layers"] = target_layers;
    j["seed"] = seed;
    if (defend_target_only) j["defend_target_only"] = true;
    return j;
}

Matrix laplace_noise(const Matrix& M, double b, std::uint64_t seed) {
    if (b <= 0.0) throw PreconditionError("laplace_noise: b must be > 0");
    Rng rng(seed);
    Matrix out = M;
    for (Eigen::Index i = 0; i < out.rows(); ++i)
        for (Eigen::Index j = 0; j < out.cols(); ++j)
            out(i, j) += rng.laplace(b);
    return out;
}

Matrix truncate_embeddings(const Matrix& Z, double r, std::uint64_t seed) {
    if (r <= 0.0 || r >= 1.0)
        throw PreconditionError("truncation ratio must lie in (0, 1)");
    int d = static_cast<int>(Z.cols());
    int keep = static_cast<int>(std::floor(d * (1.0 - r)));
    if (keep < 1)
        throw PreconditionError("truncation would drop every dimension");
    Matrix out(Z.rows(), keep);
    std::vector<int> dims(static_cast<std::size_t>(d));
    for (Eigen::Index i = 0; i < Z.rows(); ++i) {
        std::iota(dims.begin(), dims.end(), 0);
        Rng rng(sub_seed(seed, static_cast<std::uint64_t>(i)));
        rng.shuffle(dims);
        std::sort(dims.begin(), dims.begin() + keep);
        for (int c = 0; c < keep; ++c)
            out(i, c) = Z(i, dims[static_cast<std::size_t>(c)]);
    }
    return out;
}

Matrix topk_posteriors(const Matrix& O, int k) {
    if (k < 1 || k > O.cols())
        throw PreconditionError("topk-posterior: k out of range");
    Matrix out = Matrix::Zero(O.rows(), O.cols());
    std::vector<int> order(static_cast<std::size_t>(O.cols()));
    for (Eigen::Index i = 0; i < O.rows(); ++i) {
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](int a, int b) {
            if (O(i, a) != O(i, b)) return O(i, a) > O(i, b);
            return a < b;
        });
        for (int c = 0; c < k; ++c)
            out(i, order[static_cast<std::size_t>(c)]) =
                O(i, order[static_cast<std::size_t>(c)]);
    }
    return out;
}

std::vector<int> label_only(const Matrix& O) {
    if (O.cols() < 1) throw PreconditionError("label_only: empty posterior");
    std::vector<int> labels;
    labels.reserve(static_cast<std::size_t>(O.rows()));
    for (Eigen::Index i = 0; i < O.rows(); ++i)
        labels.push_back(row_argmax(O, i));
    return labels;
}

Matrix label_only_posteriors(const Matrix& O) {
    std::vector<int> labels = label_only(O);
    Matrix out = Matrix::Zero(O.rows(), O.cols());
    for (Eigen::Index i = 0; i < O.rows(); ++i)
        out(i, labels[static_cast<std::size_t>(i)]) = 1.0;
    return out;
}

std::pair<GnnModel, TrainReport> dp_train(const Graph& g, const GnnConfig& cfg,
                                          double epsilon, double clip,
                                          std::uint64_t seed) {
    if (epsilon <= 0.0) throw PreconditionError("dp_train: epsilon must be > 0");
    if (clip <= 0.0) throw PreconditionError("dp_train: clip must be > 0");
    auto [train_mask, test_mask] =
        make_masks(g.n, kDpTrainFrac, sub_seed(seed, kDpMaskStream));
    GradientPerturb p;
    p.clip = clip;
    p.noise_b = clip / epsilon;
    p.seed = sub_seed(seed, kDpNoiseStream);
    return train_with_perturbation(g, cfg, train_mask, test_mask, &p);
}

ShadowOutputs apply_output_defense(const ShadowOutputs& outs,
                                   const DefenseSpec& d) {
    d.validate();
    if (d.method == DefenseMethod::dp_gradient)
        throw UsageError(
            "dp-gradient retrains the models; it is not an output transform");

    ShadowOutputs defended = outs;
    auto defend_one = [&](EmbeddingSet& e, std::uint64_t base,
                          std::uint64_t idx) {
        switch (d.method) {
            case DefenseMethod::noisy_posterior:
                e.O = laplace_noise(e.O, d.b, sub_seed(d.seed, base + idx));
                break;
            case DefenseMethod::topk_posterior:
                e.O = topk_posteriors(e.O, d.k);
                break;
            case DefenseMethod::label_only:
                e.O = label_only_posteriors(e.O);
                break;
            case DefenseMethod::noisy_embedding:
            case DefenseMethod::truncation:
                for (int l : d.target_layers) {
                    if (static_cast<std::size_t>(l) > e.Z.size())
                        throw ConfigError(
                            "defense layer exceeds the recorded embeddings");
                    Matrix& Z = e.Z[static_cast<std::size_t>(l - 1)];
                    std::uint64_t s = sub_seed(
                        d.seed, base + idx * 64 + static_cast<std::uint64_t>(l));
                    Z = d.method == DefenseMethod::noisy_embedding
                            ? laplace_noise(Z, d.b, s)
                            : truncate_embeddings(Z, d.r, s);
                }
                break;
            case DefenseMethod::dp_gradient:
                break;
        }
    };
    if (!d.defend_target_only)
        for (std::size_t i = 0; i < defended.train_outputs.size(); ++i)
            defend_one(defended.train_outputs[i], kDefendTrainBase,
                       static_cast<std::uint64_t>(i));
    for (std::size_t j = 0; j < defended.test_outputs.size(); ++j)
        defend_one(defended.test_outputs[j], kDefendTestBase,
                   static_cast<std::uint64_t>(j));
    return defended;
}

double mean_target_accuracy(const ShadowOutputs& outs) {
    if (outs.test_outputs.empty())
        throw PreconditionError("no target-side outputs to score");
    double sum = 0.0;
    int scored = 0;
    for (std::size_t i = 0; i < outs.test_outputs.size(); ++i) {
        const Matrix& O = outs.test_outputs[i].O;
        const std::vector<int>& mask = outs.test_eval_masks[i];
        const std::vector<int>& labels = outs.test_samples[i].graph.labels;
        if (mask.empty()) continue;
        int correct = 0;
        for (int node : mask)
            if (row_argmax(O, node) == labels[static_cast<std::size_t>(node)])
                ++correct;
        sum += static_cast<double>(correct) / static_cast<double>(mask.size());
        ++scored;
    }
    if (scored == 0)
        throw PreconditionError("every target-side eval mask is empty");
    return sum / scored;
}

DefenseResult evaluate_defense(const DefenseSpec& d, const AttackSpec& attack,
                               const AdversaryKnowledge& knowledge,
                               const Graph& target, const GnnConfig& target_cfg,
                               std::uint64_t seed) {
    d.validate();
    attack.validate();
    if (is_embedding_defense(d.method) && !is_white_box(attack.id))
        throw UsageError("embedding defenses pair with white-box attacks");
    if (is_posterior_defense(d.method) && is_white_box(attack.id))
        throw UsageError("posterior defenses pair with black-box attacks");
    if (is_embedding_defense(d.method))
        for (int l : d.target_layers)
            if (l > target_cfg.hidden_layers)
                throw ConfigError("defense layer exceeds the model depth");

    DefenseResult res;
    res.fingerprint = d.fingerprint();
    if (d.method == DefenseMethod::dp_gradient) {
        GradientPerturb p;
        p.clip = d.clip;
        p.noise_b = d.clip / d.epsilon;
        p.seed = d.seed;
        ShadowOutputs outs =
            build_attack_outputs(attack, knowledge, target, target_cfg, seed,
                                 &p, d.defend_target_only);
        res.attack_accuracy = evaluate_outputs(outs, attack, seed).accuracy;
        res.target_accuracy = mean_target_accuracy(outs);
        return res;
    }

    ShadowOutputs outs =
        build_attack_outputs(attack, knowledge, target, target_cfg, seed);
    ShadowOutputs defended = apply_output_defense(outs, d);
    res.attack_accuracy = evaluate_outputs(defended, attack, seed).accuracy;
    // Embedding defenses leave the classification head untouched.
    res.target_accuracy = is_embedding_defense(d.method)
                              ? mean_target_accuracy(outs)
                              : mean_target_accuracy(defended);
    return res;
}

}  // namespace gpia
