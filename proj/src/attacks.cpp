#include "gpia/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "gpia/errors.hpp"
#include "gpia/io.hpp"
#include "gpia/parallel.hpp"
#include "gpia/rng.hpp"

namespace gpia {

AttackId attack_from_string(const std::string& s) {
    if (s == "A1") return AttackId::A1;
    if (s == "A2") return AttackId::A2;
    if (s == "A3") return AttackId::A3;
    if (s == "A4") return AttackId::A4;
    if (s == "A5") return AttackId::A5;
    if (s == "A6") return AttackId::A6;
    throw ParseError("unknown attack id: " + s);
}

std::string attack_to_string(AttackId id) {
    switch (id) {
        case AttackId::A1: return "A1";
        case AttackId::A2: return "A2";
        case AttackId::A3: return "A3";
        case AttackId::A4: return "A4";
        case AttackId::A5: return "A5";
        case AttackId::A6: return "A6";
    }
    throw RangeError("bad attack id enum");
}

bool is_white_box(AttackId id) {
    return id == AttackId::A1 || id == AttackId::A3 || id == AttackId::A5;
}

bool uses_partial(AttackId id) {
    return id == AttackId::A1 || id == AttackId::A2 || id == AttackId::A5 ||
           id == AttackId::A6;
}

bool uses_shadow(AttackId id) {
    return id == AttackId::A3 || id == AttackId::A4 || id == AttackId::A5 ||
           id == AttackId::A6;
}

Access access_from_string(const std::string& s) {
    if (s == "white") return Access::white;
    if (s == "black") return Access::black;
    throw ParseError("unknown access: " + s);
}

std::string access_to_string(Access a) {
    return a == Access::white ? "white" : "black";
}

MixRatio MixRatio::from_string(const std::string& s) {
    auto parts = split(s, ':');
    if (parts.size() != 2)
        throw ParseError("mix ratio must look like \"1:4\": " + s);
    MixRatio mr;
    try {
        mr.partial = std::stoi(parts[0]);
        mr.shadow = std::stoi(parts[1]);
    } catch (const std::exception&) {
        throw ParseError("unparsable mix ratio: " + s);
    }
    mr.validate();
    return mr;
}

std::string MixRatio::to_string() const {
    return std::to_string(partial) + ":" + std::to_string(shadow);
}

void MixRatio::validate() const {
    static const int allowed[7][2] = {{1, 10}, {1, 4}, {1, 2}, {1, 1},
                                      {2, 1},  {4, 1}, {10, 1}};
    for (const auto& a : allowed)
        if (partial == a[0] && shadow == a[1]) return;
    throw ConfigError("mix ratio " + to_string() +
                      " not one of 1:10, 1:4, 1:2, 1:1, 2:1, 4:1, 10:1");
}

std::pair<int, int> mix_counts(int train_count, const MixRatio& mr) {
    mr.validate();
    if (train_count < 2 || train_count % 2 != 0)
        throw PreconditionError("train count must be even and >= 2");
    double frac = static_cast<double>(mr.partial) /
                  static_cast<double>(mr.partial + mr.shadow);
    int p = static_cast<int>(std::lround(train_count * frac));
    p = std::max(0, std::min(train_count, p));
    return {p, train_count - p};
}

void AdversaryKnowledge::validate() const {
    if (!partial_graph && !shadow_graph)
        throw KnowledgeError(
            "adversary knowledge needs a partial or a shadow graph");
    if (partial_nodes) {
        if (!partial_graph)
            throw KnowledgeError("partial_nodes given without a partial graph");
        const auto& ids = *partial_nodes;
        if (static_cast<int>(ids.size()) != partial_graph->n)
            throw ConsistencyError("partial_nodes size must match the partial graph");
        for (std::size_t i = 0; i < ids.size(); ++i) {
            if (ids[i] < 0) throw RangeError("negative partial node id");
            if (i > 0 && ids[i] <= ids[i - 1])
                throw ConsistencyError("partial_nodes must be sorted distinct");
        }
    }
    mix_ratio.validate();
}

std::pair<Graph, std::vector<int>> sample_partial(const Graph& g,
                                                  double fraction,
                                                  std::uint64_t seed) {
    if (fraction <= 0.0 || fraction > 1.0)
        throw PreconditionError("partial fraction must lie in (0,1]");
    int k = static_cast<int>(std::lround(fraction * g.n));
    k = std::max(2, std::min(g.n, k));
    Rng rng(sub_seed(seed, 0x9a27));
    std::vector<int> nodes = rng.sample_indices(g.n, k);
    return {g.induced(nodes), nodes};
}

void AttackSpec::validate() const {
    property.validate();
    classifier.validate();
    alignment.validate();
    if (is_white_box(id)) {
        if (layers.empty())
            throw ConfigError(attack_to_string(id) +
                              " is white box and needs a non-empty layer list");
        for (int l : layers)
            if (l < 1) throw ConfigError("layer indices are 1-based");
        if (is_posterior_aggregation(aggregation))
            throw UsageError("white-box attacks aggregate embeddings, not posteriors");
    } else {
        if (!is_posterior_aggregation(aggregation))
            throw UsageError("black-box attacks aggregate posteriors, not embeddings");
    }
    if (counts.train < 2 || counts.train % 2 != 0)
        throw ConfigError("train sample count must be even and >= 2");
    if (counts.test < 2 || counts.test % 2 != 0)
        throw ConfigError("test sample count must be even and >= 2");
    if (sample_fraction <= 0.0 || sample_fraction > 1.0)
        throw ConfigError("sample_fraction must lie in (0,1]");
    if (max_node_overlap < 0.0 || max_node_overlap > 1.0)
        throw ConfigError("max_node_overlap must lie in [0,1]");
    if (planted) {
        if (planted->pos <= 0.0 || planted->pos >= 1.0 || planted->neg <= 0.0 ||
            planted->neg >= 1.0)
            throw ConfigError("planted ratios must lie in (0,1)");
        if (property.level != PropertyLevel::node)
            throw UsageError("planted sampling works on node-level properties only");
    }
}

void AttackSpec::check_knowledge(const AdversaryKnowledge& k) const {
    k.validate();
    const std::string name = attack_to_string(id);
    if (uses_partial(id) && !k.partial_graph)
        throw KnowledgeError(name + " requires a partial graph");
    if (uses_shadow(id) && !k.shadow_graph)
        throw KnowledgeError(name + " requires a shadow graph");
    Access want = is_white_box(id) ? Access::white : Access::black;
    if (k.access != want)
        throw KnowledgeError(name + " requires " + access_to_string(want) +
                             "-box access, knowledge declares " +
                             access_to_string(k.access));
}

std::string AttackSpec::fingerprint() const {
    std::string s = attack_to_string(id);
    if (is_white_box(id)) {
        s += "|layers=";
        for (std::size_t i = 0; i < layers.size(); ++i) {
            if (i) s += ',';
            s += std::to_string(layers[i]);
        }
    }
    s += "|" + aggregation_to_string(aggregation);
    s += "|" + alignment_to_string(alignment.method);
    s += "|" + classifier_to_string(classifier.kind);
    return s;
}

AttackSpec AttackSpec::from_json(const nlohmann::json& j) {
    AttackSpec s;
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string& key = it.key();
        if (key == "id") s.id = attack_from_string(it->get<std::string>());
        else if (key == "layers") s.layers = it->get<std::vector<int>>();
        else if (key == "aggregation")
            s.aggregation = aggregation_from_string(it->get<std::string>());
        else if (key == "alignment") s.alignment = AlignmentParams::from_json(*it);
        else if (key == "classifier") s.classifier = ClassifierConfig::from_json(*it);
        else if (key == "property") s.property = PropertySpec::from_json(*it);
        else if (key == "train_samples") s.counts.train = it->get<int>();
        else if (key == "test_samples") s.counts.test = it->get<int>();
        else if (key == "sample_fraction") s.sample_fraction = it->get<double>();
        else if (key == "max_node_overlap") s.max_node_overlap = it->get<double>();
        else if (key == "planted_pos") {
            if (!s.planted) s.planted = PlantedRatios{};
            s.planted->pos = it->get<double>();
        } else if (key == "planted_neg") {
            if (!s.planted) s.planted = PlantedRatios{};
            s.planted->neg = it->get<double>();
        } else {
            throw ParseError("unknown AttackSpec field: " + key);
        }
    }
    s.validate();
    return s;
}

nlohmann::json AttackSpec::to_json() const {
    nlohmann::json j{{"id", attack_to_string(id)},
                     {"layers", layers},
                     {"aggregation", aggregation_to_string(aggregation)},
                     {"alignment", alignment.to_json()},
                     {"classifier", classifier.to_json()},
                     {"property", property.to_json()},
                     {"train_samples", counts.train},
                     {"test_samples", counts.test},
                     {"sample_fraction", sample_fraction},
                     {"max_node_overlap", max_node_overlap}};
    if (planted) {
        j["planted_pos"] = planted->pos;
        j["planted_neg"] = planted->neg;
    }
    return j;
}

namespace {

// Sampler seed streams; per-sample streams leave 32-bit spacing so counts
// can never collide across uses.
constexpr std::uint64_t kTrainPartialPos = 0x41701;
constexpr std::uint64_t kTrainPartialNeg = 0x41702;
constexpr std::uint64_t kTrainShadowPos = 0x41703;
constexpr std::uint64_t kTrainShadowNeg = 0x41704;
constexpr std::uint64_t kTestPos = 0x41705;
constexpr std::uint64_t kTestNeg = 0x41706;
constexpr std::uint64_t kTrainMaskBase = 0x4200000000ULL;
constexpr std::uint64_t kTestMaskBase = 0x4300000000ULL;
constexpr std::uint64_t kTestRejectBase = 0x4400000000ULL;
constexpr std::uint64_t kPerturbTrainBase = 0x6600000000ULL;
constexpr std::uint64_t kPerturbTestBase = 0x6700000000ULL;
constexpr std::uint64_t kFitStream = 0xf17;
constexpr std::uint64_t kAlignStream = 0xa119;

constexpr double kShadowTrainFrac = 0.8;
constexpr int kTestRejectAttempts = 50;

int sample_size_for(const Graph& g, double fraction, const char* what) {
    int size = static_cast<int>(std::lround(fraction * g.n));
    if (size < 2)
        throw PreconditionError(std::string("sample size for the ") + what +
                                " graph is below 2 nodes");
    if (size > g.n)
        throw PreconditionError(std::string("sample size exceeds the ") + what +
                                " graph");
    return size;
}

std::vector<SubgraphSample> draw_balanced(
    const Graph& g, int count, int size, const PropertySpec& p,
    const std::optional<PlantedRatios>& planted, std::uint64_t pos_seed,
    std::uint64_t neg_seed, const std::vector<int>* pool) {
    int half = count / 2;
    std::vector<SubgraphSample> pos, neg;
    if (planted) {
        pos = sample_subgraphs_planted(g, half, size, true, p, planted->pos,
                                       pos_seed, pool);
        neg = sample_subgraphs_planted(g, half, size, false, p, planted->neg,
                                       neg_seed, pool);
    } else {
        pos = sample_subgraphs(g, half, size, true, p, pos_seed, pool);
        neg = sample_subgraphs(g, half, size, false, p, neg_seed, pool);
    }
    pos.insert(pos.end(), neg.begin(), neg.end());
    return pos;
}

void check_layers(const AttackSpec& spec, const GnnConfig& cfg) {
    if (!is_white_box(spec.id)) return;
    for (int l : spec.layers)
        if (l < 1 || l > cfg.hidden_layers)
            throw ConfigError("layer index " + std::to_string(l) +
                              " outside the model's 1.." +
                              std::to_string(cfg.hidden_layers) + " range");
}

struct TrainedSample {
    EmbeddingSet out;
    std::vector<int> eval_mask;
};

TrainedSample train_one(const Graph& g, const GnnConfig& cfg,
                        std::uint64_t mask_seed, const GradientPerturb* perturb,
                        std::uint64_t perturb_seed) {
    auto [train_mask, test_mask] = make_masks(g.n, kShadowTrainFrac, mask_seed);
    GnnModel model;
    if (perturb) {
        GradientPerturb local = *perturb;
        local.seed = perturb_seed;
        model = train_with_perturbation(g, cfg, train_mask, test_mask, &local).first;
    } else {
        model = train(g, cfg, train_mask, test_mask).first;
    }
    return {forward(model, g), std::move(test_mask)};
}

std::uint64_t edge_key(int u, int v) {
    if (u > v) std::swap(u, v);
    return (static_cast<std::uint64_t>(u) << 32) | static_cast<std::uint64_t>(v);
}

void collect_edges(const SubgraphSample& s, std::unordered_set<std::uint64_t>& into) {
    for (auto [a, b] : s.graph.edges)
        into.insert(edge_key(s.node_ids[static_cast<std::size_t>(a)],
                             s.node_ids[static_cast<std::size_t>(b)]));
}

// Train samples sampled from the partial graph carry partial-row ids;
// rewrites them into target ids so both sides share one id space.
void map_to_target_ids(SubgraphSample& s, const std::vector<int>& partial_nodes) {
    for (int& id : s.node_ids) id = partial_nodes[static_cast<std::size_t>(id)];
}

std::vector<SubgraphSample> sample_test_side(
    const Graph& target, const AttackSpec& spec, int size,
    const std::vector<SubgraphSample>& train_samples, bool comparable,
    std::uint64_t seed) {
    const PropertySpec& p = spec.property;
    int count = spec.counts.test;
    if (!comparable) {
        return draw_balanced(target, count, size, p, spec.planted,
                             sub_seed(seed, kTestPos), sub_seed(seed, kTestNeg),
                             nullptr);
    }
    std::unordered_set<int> used;
    for (const SubgraphSample& s : train_samples)
        if (s.parent_id == 0) used.insert(s.node_ids.begin(), s.node_ids.end());
    std::vector<int> pool;
    pool.reserve(static_cast<std::size_t>(target.n));
    for (int v = 0; v < target.n; ++v)
        if (!used.count(v)) pool.push_back(v);
    if (static_cast<int>(pool.size()) >= size) {
        try {
            return draw_balanced(target, count, size, p, spec.planted,
                                 sub_seed(seed, kTestPos),
                                 sub_seed(seed, kTestNeg), &pool);
        } catch (const SamplingError&) {
            // pool too sparse for the wanted flags; fall through
        }
    }
    // Fallback: full node set, rejecting any sample that shares an edge with
    // the train side, then check the realized node overlap budget.
    std::unordered_set<std::uint64_t> train_edges;
    for (const SubgraphSample& s : train_samples)
        if (s.parent_id == 0) collect_edges(s, train_edges);
    std::vector<SubgraphSample> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int j = 0; j < count; ++j) {
        bool want = j < count / 2;
        bool accepted = false;
        for (int attempt = 0; attempt < kTestRejectAttempts && !accepted; ++attempt) {
            std::uint64_t s = sub_seed(seed, kTestRejectBase +
                                                 static_cast<std::uint64_t>(j) * 64 +
                                                 static_cast<std::uint64_t>(attempt));
            std::vector<SubgraphSample> one =
                spec.planted
                    ? sample_subgraphs_planted(target, 1, size, want, p,
                                               want ? spec.planted->pos
                                                    : spec.planted->neg,
                                               s, nullptr)
                    : sample_subgraphs(target, 1, size, want, p, s, nullptr);
            std::unordered_set<std::uint64_t> edges;
            collect_edges(one[0], edges);
            bool clash = false;
            for (std::uint64_t e : edges)
                if (train_edges.count(e)) { clash = true; break; }
            if (!clash) {
                out.push_back(std::move(one[0]));
                accepted = true;
            }
        }
        if (!accepted)
            throw SamplingError(
                "could not draw a link-disjoint test sample within " +
                std::to_string(kTestRejectAttempts) + " attempts");
    }
    std::unordered_set<int> test_nodes;
    for (const SubgraphSample& s : out)
        test_nodes.insert(s.node_ids.begin(), s.node_ids.end());
    long overlapping = 0;
    for (int v : test_nodes) overlapping += used.count(v) ? 1 : 0;
    double overlap = test_nodes.empty() ? 0.0
                                        : static_cast<double>(overlapping) /
                                              static_cast<double>(test_nodes.size());
    if (overlap > spec.max_node_overlap)
        throw SamplingError("test-side node overlap " + format_double(overlap) +
                            " exceeds the budget " +
                            format_double(spec.max_node_overlap));
    return out;
}

OverlapReport overlap_report(const ShadowOutputs& outs) {
    OverlapReport rep;
    rep.train_size = static_cast<int>(outs.train_samples.size());
    rep.test_size = static_cast<int>(outs.test_samples.size());
    if (!outs.comparable_ids) return rep;
    std::unordered_set<int> train_nodes;
    std::unordered_set<std::uint64_t> train_edges;
    for (const SubgraphSample& s : outs.train_samples) {
        if (s.parent_id != 0) continue;
        train_nodes.insert(s.node_ids.begin(), s.node_ids.end());
        collect_edges(s, train_edges);
    }
    std::unordered_set<int> test_nodes;
    long shared = 0;
    for (const SubgraphSample& s : outs.test_samples) {
        test_nodes.insert(s.node_ids.begin(), s.node_ids.end());
        for (auto [a, b] : s.graph.edges)
            if (train_edges.count(
                    edge_key(s.node_ids[static_cast<std::size_t>(a)],
                             s.node_ids[static_cast<std::size_t>(b)])))
                ++shared;
    }
    long overlapping = 0;
    for (int v : test_nodes) overlapping += train_nodes.count(v) ? 1 : 0;
    rep.node_overlap = test_nodes.empty()
                           ? 0.0
                           : static_cast<double>(overlapping) /
                                 static_cast<double>(test_nodes.size());
    rep.shared_edges = shared;
    return rep;
}

FeatureVector sample_features(const EmbeddingSet& out, const AttackSpec& spec,
                              int sample_id) {
    FeatureVector f;
    if (is_posterior_aggregation(spec.aggregation)) {
        f = aggregate_posteriors(out.O, spec.aggregation);
    } else {
        std::vector<Matrix> Zs;
        Zs.reserve(spec.layers.size());
        for (int l : spec.layers)
            Zs.push_back(out.Z[static_cast<std::size_t>(l - 1)]);
        f = aggregate_embeddings(Zs, spec.aggregation);
    }
    f.source.layers = spec.layers;
    f.source.sample_id = sample_id;
    return f;
}

Matrix stack_rows(const std::vector<FeatureVector>& fvs, const char* side) {
    if (fvs.empty()) return Matrix(0, 0);
    Eigen::Index len = fvs.front().values.size();
    for (const FeatureVector& f : fvs)
        if (f.values.size() != len)
            throw ShapeError(std::string("ragged feature lengths on the ") + side +
                             " side");
    Matrix X(static_cast<Eigen::Index>(fvs.size()), len);
    for (std::size_t i = 0; i < fvs.size(); ++i)
        X.row(static_cast<Eigen::Index>(i)) = fvs[i].values.transpose();
    return X;
}

}  // namespace

ShadowOutputs build_shadow_outputs(const AdversaryKnowledge& k,
                                   const AttackSpec& spec,
                                   const GnnConfig& target_cfg,
                                   std::uint64_t seed) {
    spec.validate();
    spec.check_knowledge(k);
    target_cfg.validate();
    check_layers(spec, target_cfg);

    ShadowOutputs outs;
    const PropertySpec& p = spec.property;
    if (spec.id == AttackId::A1 || spec.id == AttackId::A2) {
        int size = sample_size_for(*k.partial_graph, spec.sample_fraction, "partial");
        outs.train_samples = draw_balanced(*k.partial_graph, spec.counts.train,
                                           size, p, spec.planted,
                                           sub_seed(seed, kTrainPartialPos),
                                           sub_seed(seed, kTrainPartialNeg),
                                           nullptr);
        for (SubgraphSample& s : outs.train_samples) s.parent_id = 0;
    } else if (spec.id == AttackId::A3 || spec.id == AttackId::A4) {
        int size = sample_size_for(*k.shadow_graph, spec.sample_fraction, "shadow");
        outs.train_samples = draw_balanced(*k.shadow_graph, spec.counts.train,
                                           size, p, spec.planted,
                                           sub_seed(seed, kTrainShadowPos),
                                           sub_seed(seed, kTrainShadowNeg),
                                           nullptr);
        for (SubgraphSample& s : outs.train_samples) s.parent_id = 1;
    } else {
        // One common size keeps every feature length equal across sources.
        const Graph& smaller = k.partial_graph->n <= k.shadow_graph->n
                                   ? *k.partial_graph
                                   : *k.shadow_graph;
        int size = sample_size_for(smaller, spec.sample_fraction,
                                   "smaller knowledge");
        auto [p_cnt, s_cnt] = mix_counts(spec.counts.train, k.mix_ratio);
        (void)s_cnt;
        // Odd per-source counts still balance globally: the partial side
        // gets the extra positive, the shadow side the extra negative.
        int p_pos = (p_cnt + 1) / 2, p_neg = p_cnt / 2;
        int s_pos = spec.counts.train / 2 - p_pos;
        int s_neg = spec.counts.train / 2 - p_neg;
        std::vector<SubgraphSample> part, shad;
        auto draw = [&](const Graph& g, int pos, int neg, std::uint64_t ps,
                        std::uint64_t ns) {
            std::vector<SubgraphSample> v;
            if (pos > 0) {
                auto a = spec.planted
                             ? sample_subgraphs_planted(g, pos, size, true, p,
                                                        spec.planted->pos, ps)
                             : sample_subgraphs(g, pos, size, true, p, ps);
                v.insert(v.end(), a.begin(), a.end());
            }
            if (neg > 0) {
                auto b = spec.planted
                             ? sample_subgraphs_planted(g, neg, size, false, p,
                                                        spec.planted->neg, ns)
                             : sample_subgraphs(g, neg, size, false, p, ns);
                v.insert(v.end(), b.begin(), b.end());
            }
            return v;
        };
        part = draw(*k.partial_graph, p_pos, p_neg,
                    sub_seed(seed, kTrainPartialPos),
                    sub_seed(seed, kTrainPartialNeg));
        shad = draw(*k.shadow_graph, s_pos, s_neg,
                    sub_seed(seed, kTrainShadowPos),
                    sub_seed(seed, kTrainShadowNeg));
        for (SubgraphSample& s : part) s.parent_id = 0;
        for (SubgraphSample& s : shad) s.parent_id = 1;
        outs.train_samples = std::move(part);
        outs.train_samples.insert(outs.train_samples.end(), shad.begin(),
                                  shad.end());
    }

    if (uses_partial(spec.id) && k.partial_nodes) {
        for (SubgraphSample& s : outs.train_samples)
            if (s.parent_id == 0) map_to_target_ids(s, *k.partial_nodes);
        outs.comparable_ids = true;
    }

    int n = static_cast<int>(outs.train_samples.size());
    outs.train_outputs.resize(static_cast<std::size_t>(n));
    outs.train_eval_masks.resize(static_cast<std::size_t>(n));
    parallel_for(n, [&](int i) {
        TrainedSample t = train_one(
            outs.train_samples[static_cast<std::size_t>(i)].graph, target_cfg,
            sub_seed(seed, kTrainMaskBase + static_cast<std::uint64_t>(i)),
            nullptr, 0);
        outs.train_outputs[static_cast<std::size_t>(i)] = std::move(t.out);
        outs.train_eval_masks[static_cast<std::size_t>(i)] = std::move(t.eval_mask);
    });
    return outs;
}

ShadowOutputs build_attack_outputs(const AttackSpec& spec,
                                   const AdversaryKnowledge& k,
                                   const Graph& target_graph,
                                   const GnnConfig& target_cfg,
                                   std::uint64_t seed,
                                   const GradientPerturb* perturb,
                                   bool perturb_target_only) {
    spec.validate();
    spec.check_knowledge(k);
    target_cfg.validate();
    check_layers(spec, target_cfg);
    if (k.partial_nodes) {
        for (int id : *k.partial_nodes)
            if (id >= target_graph.n)
                throw RangeError("partial node id outside the target graph");
    }

    ShadowOutputs outs;
    {
        // Sampling is cheap and serial; trainings below are the parallel part.
        const GradientPerturb* shadow_perturb =
            (perturb && !perturb_target_only) ? perturb : nullptr;
        ShadowOutputs train_side = build_shadow_outputs(k, spec, target_cfg, seed);
        if (shadow_perturb) {
            // Redo the trainings with the perturbation hook; sampling stays
            // identical so only the models differ.
            int n = static_cast<int>(train_side.train_samples.size());
            parallel_for(n, [&](int i) {
                TrainedSample t = train_one(
                    train_side.train_samples[static_cast<std::size_t>(i)].graph,
                    target_cfg,
                    sub_seed(seed, kTrainMaskBase + static_cast<std::uint64_t>(i)),
                    shadow_perturb,
                    sub_seed(shadow_perturb->seed,
                             kPerturbTrainBase + static_cast<std::uint64_t>(i)));
                train_side.train_outputs[static_cast<std::size_t>(i)] =
                    std::move(t.out);
                train_side.train_eval_masks[static_cast<std::size_t>(i)] =
                    std::move(t.eval_mask);
            });
        }
        outs = std::move(train_side);
    }

    int test_size;
    if (spec.id == AttackId::A3 || spec.id == AttackId::A4) {
        test_size = sample_size_for(target_graph, spec.sample_fraction, "target");
    } else {
        test_size = static_cast<int>(outs.train_samples.front().graph.n);
        if (test_size > target_graph.n)
            throw PreconditionError("train sample size exceeds the target graph");
    }
    outs.test_samples = sample_test_side(target_graph, spec, test_size,
                                         outs.train_samples, outs.comparable_ids,
                                         seed);
    for (SubgraphSample& s : outs.test_samples) s.parent_id = 2;

    int m = static_cast<int>(outs.test_samples.size());
    outs.test_outputs.resize(static_cast<std::size_t>(m));
    outs.test_eval_masks.resize(static_cast<std::size_t>(m));
    parallel_for(m, [&](int j) {
        TrainedSample t = train_one(
            outs.test_samples[static_cast<std::size_t>(j)].graph, target_cfg,
            sub_seed(seed, kTestMaskBase + static_cast<std::uint64_t>(j)), perturb,
            perturb ? sub_seed(perturb->seed,
                               kPerturbTestBase + static_cast<std::uint64_t>(j))
                    : 0);
        outs.test_outputs[static_cast<std::size_t>(j)] = std::move(t.out);
        outs.test_eval_masks[static_cast<std::size_t>(j)] = std::move(t.eval_mask);
    });
    return outs;
}

AttackDataset assemble_dataset(const ShadowOutputs& outs, const AttackSpec& spec,
                               std::uint64_t seed) {
    if (outs.train_samples.empty())
        throw PreconditionError("assemble_dataset: no train samples");
    if (outs.train_outputs.size() != outs.train_samples.size() ||
        outs.test_outputs.size() != outs.test_samples.size())
        throw ConsistencyError("assemble_dataset: samples/outputs size mismatch");

    std::vector<FeatureVector> train_fvs, test_fvs;
    train_fvs.reserve(outs.train_samples.size());
    for (std::size_t i = 0; i < outs.train_samples.size(); ++i)
        train_fvs.push_back(
            sample_features(outs.train_outputs[i], spec, static_cast<int>(i)));
    test_fvs.reserve(outs.test_samples.size());
    for (std::size_t j = 0; j < outs.test_samples.size(); ++j)
        test_fvs.push_back(
            sample_features(outs.test_outputs[j], spec, static_cast<int>(j)));

    if (!test_fvs.empty() &&
        train_fvs.front().values.size() != test_fvs.front().values.size()) {
        auto aligned = align(train_fvs, test_fvs, spec.alignment,
                             sub_seed(seed, kAlignStream));
        train_fvs = std::move(aligned.first);
        test_fvs = std::move(aligned.second);
    }

    AttackDataset ds;
    ds.train_X = stack_rows(train_fvs, "train");
    ds.test_X = stack_rows(test_fvs, "test");
    for (const SubgraphSample& s : outs.train_samples)
        ds.train_y.push_back(s.flag ? 1 : 0);
    for (const SubgraphSample& s : outs.test_samples)
        ds.test_y.push_back(s.flag ? 1 : 0);
    ds.feature_len = static_cast<int>(ds.train_X.cols());
    ds.overlap = overlap_report(outs);
    return ds;
}

AttackResult evaluate_outputs(const ShadowOutputs& outs, const AttackSpec& spec,
                              std::uint64_t seed) {
    AttackDataset ds = assemble_dataset(outs, spec, seed);
    AttackModel model =
        fit(ds.train_X, ds.train_y, spec.classifier, sub_seed(seed, kFitStream));
    auto [labels, scores] = predict(model, ds.test_X);
    AttackResult r;
    r.fingerprint = spec.fingerprint();
    r.accuracy = attack_accuracy(labels, ds.test_y);
    r.predictions = std::move(labels);
    r.truth = std::move(ds.test_y);
    r.scores = std::move(scores);
    r.seed = seed;
    return r;
}

AttackResult run_attack(const AttackSpec& spec, const AdversaryKnowledge& k,
                        const Graph& target_graph, const GnnConfig& target_cfg,
                        std::uint64_t seed) {
    ShadowOutputs outs =
        build_attack_outputs(spec, k, target_graph, target_cfg, seed);
    return evaluate_outputs(outs, spec, seed);
}

nlohmann::json result_json(const AttackSpec& spec, const AttackResult& r) {
    return nlohmann::json{
        {"attack_id", attack_to_string(spec.id)},
        {"layers", spec.layers},
        {"aggregation", aggregation_to_string(spec.aggregation)},
        {"alignment", alignment_to_string(spec.alignment.method)},
        {"classifier", classifier_to_string(spec.classifier.kind)},
        {"accuracy", r.accuracy},
        {"n_test", static_cast<int>(r.predictions.size())},
        {"seed", r.seed}};
}

void export_predictions_csv(const AttackResult& r, const std::string& path) {
    std::string out = "sample,prediction,score,truth\n";
    for (std::size_t i = 0; i < r.predictions.size(); ++i) {
        out += std::to_string(i) + ',' + std::to_string(r.predictions[i]) + ',' +
               format_double(r.scores(static_cast<Eigen::Index>(i))) + ',' +
               std::to_string(i < r.truth.size() ? r.truth[i] : 0) + '\n';
    }
    write_text_file(path, out);
}

double best_threshold(const std::vector<double>& values,
                      const std::vector<int>& flags) {
    if (values.empty() || values.size() != flags.size())
        throw PreconditionError("best_threshold: need matching non-empty inputs");
    std::vector<double> sorted(values);
    std::sort(sorted.begin(), sorted.end());
    sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
    std::vector<double> candidates;
    candidates.push_back(-std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i + 1 < sorted.size(); ++i)
        candidates.push_back(0.5 * (sorted[i] + sorted[i + 1]));
    candidates.push_back(std::numeric_limits<double>::infinity());
    double best = candidates.front();
    long best_correct = -1;
    for (double t : candidates) {
        long correct = 0;
        for (std::size_t i = 0; i < values.size(); ++i) {
            int pred = values[i] >= t ? 1 : 0;
            if (pred == flags[i]) ++correct;
        }
        if (correct > best_correct) {
            best_correct = correct;
            best = t;
        }
    }
    return best;
}

namespace {

AttackResult threshold_result(const std::vector<double>& knowledge_values,
                              const std::vector<int>& knowledge_flags,
                              const std::vector<double>& target_values,
                              const std::vector<int>& target_flags,
                              const std::string& fingerprint,
                              std::uint64_t seed) {
    double t = best_threshold(knowledge_values, knowledge_flags);
    AttackResult r;
    r.fingerprint = fingerprint;
    r.seed = seed;
    r.truth = target_flags;
    r.scores = Vector(static_cast<Eigen::Index>(target_values.size()));
    for (std::size_t i = 0; i < target_values.size(); ++i) {
        int pred = target_values[i] >= t ? 1 : 0;
        r.predictions.push_back(pred);
        r.scores(static_cast<Eigen::Index>(i)) = target_values[i];
    }
    r.accuracy = attack_accuracy(r.predictions, r.truth);
    return r;
}

std::vector<int> flags_of(const std::vector<SubgraphSample>& samples) {
    std::vector<int> f;
    f.reserve(samples.size());
    for (const SubgraphSample& s : samples) f.push_back(s.flag ? 1 : 0);
    return f;
}

}  // namespace

AttackResult baseline_dsad(const std::vector<SubgraphSample>& knowledge,
                           const std::vector<SubgraphSample>& targets,
                           const PropertySpec& p) {
    if (knowledge.empty())
        throw PreconditionError("dsad baseline needs at least one flagged graph");
    std::vector<double> kv, tv;
    for (const SubgraphSample& s : knowledge)
        kv.push_back(group_size_ratio(s.graph, p));
    for (const SubgraphSample& s : targets)
        tv.push_back(group_size_ratio(s.graph, p));
    return threshold_result(kv, flags_of(knowledge), tv, flags_of(targets),
                            "B4|dsad", 0);
}

AttackResult baseline_lossgap(const std::vector<SubgraphSample>& knowledge,
                              const std::vector<SubgraphSample>& targets,
                              const GnnConfig& cfg, std::uint64_t seed) {
    if (knowledge.empty())
        throw PreconditionError("lossgap baseline needs at least one sample");
    cfg.validate();
    auto gaps = [&](const std::vector<SubgraphSample>& samples,
                    std::uint64_t base) {
        std::vector<double> g(samples.size(), 0.0);
        parallel_for(static_cast<int>(samples.size()), [&](int i) {
            const Graph& graph = samples[static_cast<std::size_t>(i)].graph;
            auto [train_mask, test_mask] = make_masks(
                graph.n, kShadowTrainFrac,
                sub_seed(seed, base + static_cast<std::uint64_t>(i)));
            GnnModel model = train(graph, cfg, train_mask, test_mask).first;
            g[static_cast<std::size_t>(i)] =
                masked_loss(model, graph, train_mask) -
                masked_loss(model, graph, test_mask);
        });
        return g;
    };
    std::vector<double> kv = gaps(knowledge, kTrainMaskBase);
    std::vector<double> tv = gaps(targets, kTestMaskBase);
    return threshold_result(kv, flags_of(knowledge), tv, flags_of(targets),
                            "B5|lossgap", seed);
}

AttackResult baseline_aia(const Matrix& node_X,
                          const std::vector<int>& node_values,
                          const std::vector<SubgraphSample>& targets,
                          const std::vector<Matrix>& target_node_X,
                          const PropertySpec& p, std::uint64_t seed) {
    if (node_X.rows() != static_cast<Eigen::Index>(node_values.size()))
        throw ShapeError("aia: node feature rows must match value count");
    if (targets.empty() || targets.size() != target_node_X.size())
        throw PreconditionError("aia: need matching target graphs and features");
    const std::vector<int>& declared = targets.front().graph.property_values;
    if (declared.size() != 2)
        throw UsageError("aia baseline requires a binary property column");
    int lo = declared[0], hi = declared[1];

    std::vector<int> y;
    y.reserve(node_values.size());
    for (int v : node_values) {
        if (v != lo && v != hi)
            throw RangeError("aia: node value outside the declared pair");
        y.push_back(v == hi ? 1 : 0);
    }

    // Cap the per-node training set so huge shadow collections stay cheap.
    constexpr int kMaxRows = 5000;
    Matrix X = node_X;
    if (X.rows() > kMaxRows) {
        Rng rng(sub_seed(seed, 0xb1a0));
        std::vector<int> keep =
            rng.sample_indices(static_cast<int>(X.rows()), kMaxRows);
        Matrix Xs(kMaxRows, X.cols());
        std::vector<int> ys(static_cast<std::size_t>(kMaxRows));
        for (int i = 0; i < kMaxRows; ++i) {
            Xs.row(i) = X.row(keep[static_cast<std::size_t>(i)]);
            ys[static_cast<std::size_t>(i)] =
                y[static_cast<std::size_t>(keep[static_cast<std::size_t>(i)])];
        }
        X = std::move(Xs);
        y = std::move(ys);
    }

    ClassifierConfig cfg;
    cfg.kind = ClassifierKind::mlp;
    AttackModel node_model = fit(X, y, cfg, sub_seed(seed, 0xb1a1));

    AttackResult r;
    r.fingerprint = "B1|aia";
    r.seed = seed;
    r.truth = flags_of(targets);
    r.scores = Vector(static_cast<Eigen::Index>(targets.size()));
    for (std::size_t t = 0; t < targets.size(); ++t) {
        const SubgraphSample& s = targets[t];
        if (target_node_X[t].rows() != s.graph.n)
            throw ShapeError("aia: target feature rows must match graph nodes");
        auto [labels, scores] = predict(node_model, target_node_X[t]);
        Graph g = s.graph;
        for (int v = 0; v < g.n; ++v)
            g.features(v, g.property_col) =
                labels[static_cast<std::size_t>(v)] == 1 ? hi : lo;
        bool flag = evaluate_property(g, p);
        r.predictions.push_back(flag ? 1 : 0);
        r.scores(static_cast<Eigen::Index>(t)) = flag ? 1.0 : 0.0;
    }
    r.accuracy = attack_accuracy(r.predictions, r.truth);
    return r;
}

namespace {

struct Kmeans2 {
    Matrix centroids;  // 2 x d
    std::vector<int> assign;
    double sse = 0.0;
};

Kmeans2 lloyd_once(const Matrix& X, std::uint64_t seed) {
    int m = static_cast<int>(X.rows());
    Rng rng(seed);
    auto same_row = [&](int i, int j) {
        return (X.row(i) - X.row(j)).squaredNorm() == 0.0;
    };
    int a = static_cast<int>(rng.uniform_index(static_cast<std::size_t>(m)));
    int b = a;
    for (int tries = 0; tries < 200 && (b == a || same_row(a, b)); ++tries)
        b = static_cast<int>(rng.uniform_index(static_cast<std::size_t>(m)));
    if (b == a || same_row(a, b)) {
        for (int i = 0; i < m; ++i)
            if (!same_row(i, a)) { b = i; break; }
    }
    Kmeans2 km;
    km.centroids = Matrix(2, X.cols());
    km.centroids.row(0) = X.row(a);
    km.centroids.row(1) = X.row(b);
    km.assign.assign(static_cast<std::size_t>(m), 0);
    for (int iter = 0; iter < 100; ++iter) {
        bool changed = false;
        for (int i = 0; i < m; ++i) {
            double d0 = (X.row(i) - km.centroids.row(0)).squaredNorm();
            double d1 = (X.row(i) - km.centroids.row(1)).squaredNorm();
            int c = d1 < d0 ? 1 : 0;
            if (c != km.assign[static_cast<std::size_t>(i)]) {
                km.assign[static_cast<std::size_t>(i)] = c;
                changed = true;
            }
        }
        for (int c = 0; c < 2; ++c) {
            Vector sum = Vector::Zero(X.cols());
            int cnt = 0;
            for (int i = 0; i < m; ++i)
                if (km.assign[static_cast<std::size_t>(i)] == c) {
                    sum += X.row(i).transpose();
                    ++cnt;
                }
            if (cnt == 0) {
                // Repopulate an emptied cluster with the row farthest from
                // the surviving centroid.
                int far = 0;
                double dmax = -1.0;
                for (int i = 0; i < m; ++i) {
                    double d = (X.row(i) - km.centroids.row(1 - c)).squaredNorm();
                    if (d > dmax) { dmax = d; far = i; }
                }
                km.assign[static_cast<std::size_t>(far)] = c;
                km.centroids.row(c) = X.row(far);
                changed = true;
            } else {
                km.centroids.row(c) = (sum / cnt).transpose();
            }
        }
        if (!changed) break;
    }
    km.sse = 0.0;
    for (int i = 0; i < m; ++i)
        km.sse += (X.row(i) -
                   km.centroids.row(km.assign[static_cast<std::size_t>(i)]))
                      .squaredNorm();
    return km;
}

}  // namespace

AttackResult baseline_kmeans(const Matrix& train_X,
                             const std::vector<int>& train_y,
                             const Matrix& test_X,
                             const std::vector<int>& test_y,
                             std::uint64_t seed) {
    if (train_X.rows() < 2 ||
        train_X.rows() != static_cast<Eigen::Index>(train_y.size()))
        throw PreconditionError("kmeans baseline needs >= 2 labeled train rows");
    bool distinct = false;
    for (Eigen::Index i = 1; i < train_X.rows() && !distinct; ++i)
        distinct = (train_X.row(i) - train_X.row(0)).squaredNorm() != 0.0;
    if (!distinct)
        throw DegenerateError("kmeans baseline: all train rows identical");

    constexpr int kRestarts = 10;
    Kmeans2 best;
    best.sse = std::numeric_limits<double>::infinity();
    for (int r = 0; r < kRestarts; ++r) {
        Kmeans2 km = lloyd_once(
            train_X, sub_seed(seed, 0xb2a00 + static_cast<std::uint64_t>(r)));
        if (km.sse < best.sse) best = std::move(km);
    }

    // Majority training label per cluster; ties go positive.
    int label[2];
    for (int c = 0; c < 2; ++c) {
        long pos = 0, total = 0;
        for (std::size_t i = 0; i < train_y.size(); ++i)
            if (best.assign[i] == c) {
                ++total;
                pos += train_y[i];
            }
        label[c] = (total == 0 || 2 * pos >= total) ? 1 : 0;
    }

    AttackResult r;
    r.fingerprint = "B2|kmeans";
    r.seed = seed;
    r.truth = test_y;
    r.scores = Vector(test_X.rows());
    for (Eigen::Index i = 0; i < test_X.rows(); ++i) {
        double d0 = (test_X.row(i) - best.centroids.row(0)).squaredNorm();
        double d1 = (test_X.row(i) - best.centroids.row(1)).squaredNorm();
        int c = d1 < d0 ? 1 : 0;
        r.predictions.push_back(label[c]);
        r.scores(i) = static_cast<double>(label[c]);
    }
    r.accuracy = attack_accuracy(r.predictions, r.truth);
    return r;
}

AttackResult baseline_meta(const Matrix& train_X,
                           const std::vector<int>& train_y,
                           const Matrix& test_X,
                           const std::vector<int>& test_y,
                           std::uint64_t seed) {
    if (train_X.rows() != static_cast<Eigen::Index>(train_y.size()))
        throw ShapeError("meta baseline: X/y row mismatch");
    // Stratified 50/50 split into base and meta halves.
    std::vector<int> pos, neg;
    for (std::size_t i = 0; i < train_y.size(); ++i)
        (train_y[i] == 1 ? pos : neg).push_back(static_cast<int>(i));
    if (pos.size() < 2 || neg.size() < 2)
        throw DegenerateError("meta baseline needs >= 2 rows per class");
    Rng rng(sub_seed(seed, 0xb3a00));
    rng.shuffle(pos);
    rng.shuffle(neg);
    std::vector<int> base_idx, meta_idx;
    for (std::size_t i = 0; i < pos.size(); ++i)
        (i < pos.size() / 2 ? base_idx : meta_idx).push_back(pos[i]);
    for (std::size_t i = 0; i < neg.size(); ++i)
        (i < neg.size() / 2 ? base_idx : meta_idx).push_back(neg[i]);
    std::sort(base_idx.begin(), base_idx.end());
    std::sort(meta_idx.begin(), meta_idx.end());

    auto take = [&](const std::vector<int>& idx) {
        Matrix X(static_cast<Eigen::Index>(idx.size()), train_X.cols());
        std::vector<int> y;
        y.reserve(idx.size());
        for (std::size_t i = 0; i < idx.size(); ++i) {
            X.row(static_cast<Eigen::Index>(i)) = train_X.row(idx[i]);
            y.push_back(train_y[static_cast<std::size_t>(idx[i])]);
        }
        return std::make_pair(X, y);
    };
    auto [base_X, base_y] = take(base_idx);
    auto [meta_X, meta_y] = take(meta_idx);

    ClassifierKind kinds[3] = {ClassifierKind::mlp, ClassifierKind::rf,
                               ClassifierKind::lr};
    std::vector<AttackModel> bases;
    for (int b = 0; b < 3; ++b) {
        ClassifierConfig cfg;
        cfg.kind = kinds[b];
        bases.push_back(fit(base_X, base_y, cfg,
                            sub_seed(seed, 0xb3a01 + static_cast<std::uint64_t>(b))));
    }
    auto stack_scores = [&](const Matrix& X) {
        Matrix S(X.rows(), 3);
        for (int b = 0; b < 3; ++b)
            S.col(b) = predict(bases[static_cast<std::size_t>(b)], X).second;
        return S;
    };
    ClassifierConfig meta_cfg;
    meta_cfg.kind = ClassifierKind::lr;
    AttackModel meta =
        fit(stack_scores(meta_X), meta_y, meta_cfg, sub_seed(seed, 0xb3a04));

    auto [labels, scores] = predict(meta, stack_scores(test_X));
    AttackResult r;
    r.fingerprint = "B3|meta";
    r.seed = seed;
    r.predictions = std::move(labels);
    r.truth = test_y;
    r.scores = std::move(scores);
    r.accuracy = attack_accuracy(r.predictions, r.truth);
    return r;
}

}  // namespace gpia
