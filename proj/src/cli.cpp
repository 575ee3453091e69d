#include "gpia/cli.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <mutex>
#include <thread>

#include <nlohmann/json.hpp>

#include "gpia/errors.hpp"
#include "gpia/io.hpp"
#include "gpia/parallel.hpp"
#include "gpia/rng.hpp"

namespace gpia {

namespace {

constexpr std::uint64_t kPartialStream = 0xc1a0;
constexpr std::uint64_t kCliMaskStream = 0xc11d;
constexpr std::uint64_t kGapSampleBase = 0x6ab0000000ULL;

constexpr int kConfigFormatVersion = 1;
constexpr int kModelFormatVersion = 1;

std::string join_path(const std::string& dir, const std::string& name) {
    return (std::filesystem::path(dir) / name).string();
}

}  // namespace

bool SweepAxes::any() const {
    return !noise_scales.empty() || !truncation_ratios.empty() ||
           !mix_ratios.empty() || !depths.empty() || !group_ratios.empty();
}

long SweepAxes::combinations() const {
    long c = 1;
    if (!depths.empty()) c *= static_cast<long>(depths.size());
    if (!group_ratios.empty()) c *= static_cast<long>(group_ratios.size());
    if (!mix_ratios.empty()) c *= static_cast<long>(mix_ratios.size());
    if (!noise_scales.empty()) c *= static_cast<long>(noise_scales.size());
    if (!truncation_ratios.empty())
        c *= static_cast<long>(truncation_ratios.size());
    return c;
}

std::string fnv1a_hex(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(h));
    return buf;
}

namespace {

using nlohmann::json;

// Collects one message per broken constraint so a bad config reports
// everything in a single pass.
struct Violations {
    std::vector<std::string> items;

    void add(const std::string& m) { items.push_back(m); }
    template <typename F>
    void attempt(const std::string& where, F&& f) {
        try {
            f();
        } catch (const std::exception& e) {
            add(where + ": " + e.what());
        }
    }
};

KnowledgeConfig knowledge_from_json(const json& j, Violations& v) {
    KnowledgeConfig k;
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string& key = it.key();
        if (key == "access")
            v.attempt("knowledge.access", [&] {
                k.access = access_from_string(it->get<std::string>());
            });
        else if (key == "partial_fraction")
            k.partial_fraction = it->get<double>();
        else if (key == "shadow")
            v.attempt("knowledge.shadow", [&] {
                k.shadow_synthetic = SyntheticConfig::from_json(*it);
            });
        else if (key == "shadow_dir")
            k.shadow_dir = it->get<std::string>();
        else if (key == "mix_ratio")
            v.attempt("knowledge.mix_ratio", [&] {
                k.mix_ratio = MixRatio::from_string(it->get<std::string>());
            });
        else
            v.add("unknown field: knowledge." + key);
    }
    if (k.partial_fraction &&
        (*k.partial_fraction <= 0.0 || *k.partial_fraction > 1.0))
        v.add("knowledge.partial_fraction must lie in (0, 1]");
    if (k.shadow_synthetic && k.shadow_dir)
        v.add("knowledge: give either shadow or shadow_dir, not both");
    return k;
}

SweepAxes sweep_from_json(const json& j, Violations& v) {
    SweepAxes s;
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string& key = it.key();
        if (key == "noise_scales") {
            s.noise_scales = it->get<std::vector<double>>();
            for (double b : s.noise_scales)
                if (b <= 0.0) v.add("sweep.noise_scales: b must be > 0");
        } else if (key == "truncation_ratios") {
            s.truncation_ratios = it->get<std::vector<double>>();
            for (double r : s.truncation_ratios)
                if (r <= 0.0 || r >= 1.0)
                    v.add("sweep.truncation_ratios: r must lie in (0, 1)");
        } else if (key == "mix_ratios") {
            for (const auto& m : *it)
                v.attempt("sweep.mix_ratios", [&] {
                    s.mix_ratios.push_back(
                        MixRatio::from_string(m.get<std::string>()));
                });
        } else if (key == "depths") {
            s.depths = it->get<std::vector<int>>();
            for (int d : s.depths)
                if (d < 2 || d > 8) v.add("sweep.depths: depth must lie in [2, 8]");
        } else if (key == "group_ratios") {
            s.group_ratios = it->get<std::vector<double>>();
            for (double g : s.group_ratios)
                if (g <= 0.0 || g >= 1.0)
                    v.add("sweep.group_ratios: ratio must lie in (0, 1)");
        } else {
            v.add("unknown field: sweep." + key);
        }
        if (it->is_array() && it->empty()) v.add("sweep axis empty: " + key);
    }
    return s;
}

void check_taxonomy(const ExperimentConfig& c, Violations& v) {
    for (const AttackSpec& a : c.attacks) {
        std::string id = attack_to_string(a.id);
        if (uses_partial(a.id) && !c.knowledge.partial_fraction)
            v.add("taxonomy: " + id +
                  " needs a partial graph (knowledge.partial_fraction)");
        if (uses_shadow(a.id) && !c.knowledge.shadow_synthetic &&
            !c.knowledge.shadow_dir)
            v.add("taxonomy: " + id +
                  " needs a shadow graph (knowledge.shadow or shadow_dir)");
        if (is_white_box(a.id) && c.knowledge.access != Access::white)
            v.add("taxonomy: " + id + " is white-box but access is black");
        if (!is_white_box(a.id) && c.knowledge.access != Access::black)
            v.add("taxonomy: " + id + " is black-box but access is white");
    }
}

void check_files(const ExperimentConfig& c, Violations& v) {
    auto check_dir = [&](const std::string& dir, const std::string& what) {
        for (const char* name : {"edges.tsv", "features.csv"}) {
            std::string p = join_path(dir, name);
            if (!std::filesystem::exists(p))
                v.add(what + ": missing file " + p);
        }
    };
    if (c.graph_dir) check_dir(*c.graph_dir, "graph_dir");
    if (c.knowledge.shadow_dir) check_dir(*c.knowledge.shadow_dir, "shadow_dir");
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
    ExperimentConfig c;
    Violations v;
    bool seeds_given = false;
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string& key = it.key();
        if (key == "graph_dir")
            c.graph_dir = it->get<std::string>();
        else if (key == "synthetic")
            v.attempt("synthetic",
                      [&] { c.synthetic = SyntheticConfig::from_json(*it); });
        else if (key == "gnn")
            v.attempt("gnn", [&] { c.gnn = GnnConfig::from_json(*it); });
        else if (key == "property")
            v.attempt("property",
                      [&] { c.property = PropertySpec::from_json(*it); });
        else if (key == "attacks")
            for (std::size_t i = 0; i < it->size(); ++i)
                v.attempt("attacks[" + std::to_string(i) + "]", [&] {
                    c.attacks.push_back(AttackSpec::from_json((*it)[i]));
                });
        else if (key == "defenses")
            for (std::size_t i = 0; i < it->size(); ++i)
                v.attempt("defenses[" + std::to_string(i) + "]", [&] {
                    c.defenses.push_back(DefenseSpec::from_json((*it)[i]));
                });
        else if (key == "knowledge")
            c.knowledge = knowledge_from_json(*it, v);
        else if (key == "sweep")
            c.sweep = sweep_from_json(*it, v);
        else if (key == "seed")
            c.seed = it->get<std::uint64_t>();
        else if (key == "seeds") {
            seeds_given = true;
            c.seeds = it->get<std::vector<std::uint64_t>>();
            if (c.seeds.empty()) v.add("seeds must not be empty");
        } else if (key == "out_dir")
            c.out_dir = it->get<std::string>();
        else if (key == "model_out")
            c.model_out = it->get<std::string>();
        else if (key == "element")
            v.attempt("element", [&] {
                c.analyze_element = element_from_string(it->get<std::string>());
            });
        else if (key == "jobs") {
            c.jobs = it->get<int>();
            if (c.jobs < 1) v.add("jobs must be >= 1");
        } else
            v.add("unknown field: " + key);
    }
    if (!seeds_given) c.seeds = {c.seed};
    check_taxonomy(c, v);
    check_files(c, v);
    if (!v.items.empty()) {
        std::string msg = "config validation failed:";
        for (const std::string& m : v.items) msg += "\n- " + m;
        throw ConfigError(msg);
    }
    // The hash names the experiment, not one execution of it: placement and
    // seed knobs stay out so equal hashes plus equal seeds imply identical
    // artifacts.
    json canon = j;
    for (const char* key : {"out_dir", "jobs", "seed", "seeds"}) canon.erase(key);
    c.config_hash = fnv1a_hex(canon.dump());
    return c;
}

nlohmann::json ExperimentConfig::to_json() const {
    json j;
    if (graph_dir) j["graph_dir"] = *graph_dir;
    if (synthetic) j["synthetic"] = synthetic->to_json();
    if (gnn) j["gnn"] = gnn->to_json();
    if (property) j["property"] = property->to_json();
    for (const AttackSpec& a : attacks) j["attacks"].push_back(a.to_json());
    for (const DefenseSpec& d : defenses) j["defenses"].push_back(d.to_json());
    j["seed"] = seed;
    j["seeds"] = seeds;
    j["out_dir"] = out_dir;
    j["jobs"] = jobs;
    return j;
}

ExperimentConfig validate_config(const std::string& path) {
    json j;
    try {
        j = json::parse(read_text_file(path));
    } catch (const json::exception& e) {
        throw ParseError("config " + path + ": " + e.what());
    }
    ExperimentConfig c = ExperimentConfig::from_json(j);
    if (const char* env = std::getenv("GPIA_OUT_DIR")) c.out_dir = env;
    return c;
}

nlohmann::json RunManifest::to_json() const {
    json j;
    j["config_hash"] = config_hash;
    j["versions"] = versions;
    j["seeds"] = seeds;
    j["outputs"] = outputs;
    return j;
}

void RunManifest::write(const std::string& path) const {
    write_text_file(path, to_json().dump(2) + "\n");
}

namespace {

Graph resolve_target(const ExperimentConfig& c) {
    if (c.synthetic) return generate_synthetic(*c.synthetic);
    if (c.graph_dir)
        return load_graph(join_path(*c.graph_dir, "edges.tsv"),
                          join_path(*c.graph_dir, "features.csv"),
                          c.property ? c.property->property_col : 0);
    throw ConfigError("no graph source: give synthetic or graph_dir");
}

AdversaryKnowledge build_knowledge(const ExperimentConfig& c, const Graph& target) {
    AdversaryKnowledge k;
    k.access = c.knowledge.access;
    k.mix_ratio = c.knowledge.mix_ratio;
    if (c.knowledge.partial_fraction) {
        auto [pg, ids] = sample_partial(target, *c.knowledge.partial_fraction,
                                        sub_seed(c.seed, kPartialStream));
        k.partial_graph = std::move(pg);
        k.partial_nodes = std::move(ids);
    }
    if (c.knowledge.shadow_synthetic)
        k.shadow_graph = generate_synthetic(*c.knowledge.shadow_synthetic);
    else if (c.knowledge.shadow_dir)
        k.shadow_graph = load_graph(
            join_path(*c.knowledge.shadow_dir, "edges.tsv"),
            join_path(*c.knowledge.shadow_dir, "features.csv"),
            c.property ? c.property->property_col : 0);
    return k;
}

RunManifest base_manifest(const ExperimentConfig& c) {
    RunManifest m;
    m.config_hash = c.config_hash;
    m.versions = {{"config", kConfigFormatVersion},
                  {"model", kModelFormatVersion}};
    m.seeds = {c.seed};
    return m;
}

void finish(RunManifest& m, const ExperimentConfig& c) {
    m.outputs.push_back("manifest.json");
    m.write(join_path(c.out_dir, "manifest.json"));
}

const GnnConfig& need_gnn(const ExperimentConfig& c) {
    if (!c.gnn) throw ConfigError("this stage needs a gnn section");
    return *c.gnn;
}

const PropertySpec& need_property(const ExperimentConfig& c) {
    if (!c.property) throw ConfigError("this stage needs a property section");
    return *c.property;
}

const AttackSpec& need_attack(const ExperimentConfig& c) {
    if (c.attacks.empty()) throw ConfigError("this stage needs an attack");
    return c.attacks.front();
}

RunManifest stage_synth(const ExperimentConfig& c) {
    if (!c.synthetic) throw ConfigError("synth needs a synthetic section");
    Graph g = generate_synthetic(*c.synthetic);
    save_graph(g, join_path(c.out_dir, "edges.tsv"),
               join_path(c.out_dir, "features.csv"));
    std::printf("synth: n=%d edges=%zu features=%d -> %s\n", g.n,
                g.edges.size(), g.num_features(), c.out_dir.c_str());
    RunManifest m = base_manifest(c);
    m.outputs = {"edges.tsv", "features.csv"};
    finish(m, c);
    return m;
}

RunManifest stage_train(const ExperimentConfig& c) {
    if (!c.model_out) throw ConfigError("train needs model_out");
    Graph g = resolve_target(c);
    GnnConfig cfg = need_gnn(c);
    auto [tm, em] = make_masks(g.n, 0.8, sub_seed(cfg.seed, kCliMaskStream));
    auto [model, report] = train(g, cfg, tm, em);
    std::filesystem::path out(*c.model_out);
    if (out.has_parent_path())
        std::filesystem::create_directories(out.parent_path());
    save_model(model, *c.model_out);
    std::printf("train: %s layers=%d epochs=%d best=%d test_acc=%.4f -> %s\n",
                arch_to_string(cfg.arch).c_str(), cfg.hidden_layers,
                model.trained_epochs, report.best_epoch,
                report.test_acc[static_cast<std::size_t>(report.best_epoch - 1)],
                c.model_out->c_str());
    RunManifest m = base_manifest(c);
    m.seeds = {cfg.seed};
    m.outputs = {out.filename().string()};
    finish(m, c);
    return m;
}

RunManifest stage_attack(const ExperimentConfig& c) {
    if (c.attacks.empty()) throw ConfigError("attack stage needs attacks");
    Graph target = resolve_target(c);
    AdversaryKnowledge k = build_knowledge(c, target);
    const GnnConfig& cfg = need_gnn(c);

    RunManifest m = base_manifest(c);
    std::string csv =
        "attack_id,aggregation,alignment,classifier,seed,accuracy,n_test,"
        "config_hash\n";
    std::printf("attack_id  classifier  accuracy\n");
    for (std::size_t i = 0; i < c.attacks.size(); ++i) {
        const AttackSpec& a = c.attacks[i];
        AttackResult r = run_attack(a, k, target, cfg, c.seed);
        std::string id = attack_to_string(a.id);
        std::string base = "attack_" + std::to_string(i) + "_" + id;

        json rj = result_json(a, r);
        rj["config_hash"] = c.config_hash;
        write_text_file(join_path(c.out_dir, base + ".json"),
                        rj.dump(2) + "\n");
        export_predictions_csv(r, join_path(c.out_dir, base + "_predictions.csv"));
        m.outputs.push_back(base + ".json");
        m.outputs.push_back(base + "_predictions.csv");

        csv += id + ',' + aggregation_to_string(a.aggregation) + ',' +
               alignment_to_string(a.alignment.method) + ',' +
               classifier_to_string(a.classifier.kind) + ',' +
               std::to_string(c.seed) + ',' + format_double(r.accuracy) + ',' +
               std::to_string(r.predictions.size()) + ',' + c.config_hash +
               '\n';
        std::printf("%-9s  %-10s  %.4f\n", id.c_str(),
                    classifier_to_string(a.classifier.kind).c_str(),
                    r.accuracy);
    }
    write_text_file(join_path(c.out_dir, "results.csv"), csv);
    m.outputs.push_back("results.csv");
    finish(m, c);
    return m;
}

bool compatible(const DefenseSpec& d, const AttackSpec& a) {
    if (d.method == DefenseMethod::dp_gradient) return true;
    return is_embedding_defense(d.method) == is_white_box(a.id);
}

RunManifest stage_defend(const ExperimentConfig& c) {
    if (c.defenses.empty()) throw ConfigError("defend stage needs defenses");
    if (c.attacks.empty()) throw ConfigError("defend stage needs attacks");
    Graph target = resolve_target(c);
    AdversaryKnowledge k = build_knowledge(c, target);
    const GnnConfig& cfg = need_gnn(c);

    std::string csv = "method,param,attack_id,attack_acc,target_acc,seed\n";
    int rows = 0;
    std::printf("method           param   attack  attack_acc  target_acc\n");
    for (const DefenseSpec& d : c.defenses)
        for (const AttackSpec& a : c.attacks) {
            if (!compatible(d, a)) continue;
            DefenseResult res = evaluate_defense(d, a, k, target, cfg, c.seed);
            csv += to_string(d.method) + ',' + format_double(d.param()) + ',' +
                   attack_to_string(a.id) + ',' +
                   format_double(res.attack_accuracy) + ',' +
                   format_double(res.target_accuracy) + ',' +
                   std::to_string(c.seed) + '\n';
            std::printf("%-15s  %6g  %-6s  %10.4f  %10.4f\n",
                        to_string(d.method).c_str(), d.param(),
                        attack_to_string(a.id).c_str(), res.attack_accuracy,
                        res.target_accuracy);
            ++rows;
        }
    if (rows == 0)
        throw UsageError("defend: no compatible defense/attack pairing");
    write_text_file(join_path(c.out_dir, "defense_results.csv"), csv);
    RunManifest m = base_manifest(c);
    m.outputs = {"defense_results.csv"};
    finish(m, c);
    return m;
}

RunManifest stage_analyze(const ExperimentConfig& c, const std::string& mode) {
    Graph target = resolve_target(c);
    RunManifest m = base_manifest(c);

    if (mode == "influence") {
        InfluenceReport rep = influence_report(target, need_property(c),
                                               c.analyze_element, need_gnn(c),
                                               c.seed);
        export_influence_csv(rep, join_path(c.out_dir, "influence.csv"));
        std::printf("influence (%s): lhs %.6f (%d)  rhs %.6f (%d)\n",
                    to_string(rep.kind).c_str(), rep.lhs_mean, rep.lhs_count,
                    rep.rhs_mean, rep.rhs_count);
        m.outputs = {"influence.csv"};
    } else if (mode == "disparity" || mode == "correlation") {
        const GnnConfig& cfg = need_gnn(c);
        auto [tm, em] = make_masks(target.n, 0.8, sub_seed(c.seed, kCliMaskStream));
        GnnModel model = train(target, cfg, tm, em).first;
        if (mode == "disparity") {
            DisparityReport rep = group_metrics(model, target, need_property(c), em);
            write_text_file(
                join_path(c.out_dir, "disparity.csv"),
                "lhs_loss,lhs_accuracy,lhs_count,rhs_loss,rhs_accuracy,"
                "rhs_count,loss_gap\n" +
                    format_double(rep.lhs.loss) + ',' +
                    format_double(rep.lhs.accuracy) + ',' +
                    std::to_string(rep.lhs.count) + ',' +
                    format_double(rep.rhs.loss) + ',' +
                    format_double(rep.rhs.accuracy) + ',' +
                    std::to_string(rep.rhs.count) + ',' +
                    format_double(rep.loss_gap) + '\n');
            std::printf("disparity: lhs loss %.6f acc %.4f (%d)  rhs loss %.6f "
                        "acc %.4f (%d)  gap %.6f\n",
                        rep.lhs.loss, rep.lhs.accuracy, rep.lhs.count,
                        rep.rhs.loss, rep.rhs.accuracy, rep.rhs.count,
                        rep.loss_gap);
            m.outputs = {"disparity.csv"};
        } else {
            InfluenceReport rep = influence_report(target, need_property(c),
                                                   ElementKind::node, cfg, c.seed);
            EmbeddingSet e = forward(model, target);
            std::vector<double> losses;
            for (int v = 0; v < target.n; ++v)
                losses.push_back(-std::log(std::max(
                    e.O(v, target.labels[static_cast<std::size_t>(v)]), 1e-12)));
            double r = pearson(rep.scores, losses);
            write_text_file(join_path(c.out_dir, "correlation.csv"),
                            "n,pearson\n" + std::to_string(target.n) + ',' +
                                format_double(r) + '\n');
            std::printf("correlation: influence vs node loss r=%.6f (n=%d)\n",
                        r, target.n);
            m.outputs = {"correlation.csv"};
        }
    } else if (mode == "gapbuckets") {
        const AttackSpec& a = need_attack(c);
        const GnnConfig& cfg = need_gnn(c);
        AdversaryKnowledge k = build_knowledge(c, target);
        ShadowOutputs outs = build_attack_outputs(a, k, target, cfg, c.seed);
        AttackResult r = evaluate_outputs(outs, a, c.seed);
        std::vector<std::pair<double, bool>> samples;
        for (std::size_t i = 0; i < outs.test_samples.size(); ++i) {
            const Graph& g = outs.test_samples[i].graph;
            auto [tm, em] = make_masks(
                g.n, 0.8, sub_seed(c.seed, kGapSampleBase + i));
            GnnModel sm = train(g, cfg, tm, em).first;
            try {
                DisparityReport rep = group_metrics(sm, g, a.property, em);
                samples.push_back({std::abs(rep.loss_gap),
                                   r.predictions[i] == r.truth[i]});
            } catch (const PreconditionError&) {
                // one-group sample, no gap to report
            }
        }
        std::vector<GapBucket> table = gap_buckets(samples);
        export_gap_table_csv(table, join_path(c.out_dir, "gap_buckets.csv"));
        for (const GapBucket& b : table)
            std::printf("%-8s  gap %.6f  attack_acc %.4f  (%d)\n",
                        b.label.c_str(), b.mean_gap, b.mean_accuracy, b.count);
        m.outputs = {"gap_buckets.csv"};
    } else if (mode == "distribution") {
        const AttackSpec& a = need_attack(c);
        AdversaryKnowledge k = build_knowledge(c, target);
        ShadowOutputs outs = build_attack_outputs(a, k, target, need_gnn(c), c.seed);
        AttackDataset ds = assemble_dataset(outs, a, c.seed);
        std::vector<Vector> feats;
        std::vector<int> flags;
        for (Eigen::Index i = 0; i < ds.train_X.rows(); ++i) {
            feats.push_back(ds.train_X.row(i).transpose());
            flags.push_back(ds.train_y[static_cast<std::size_t>(i)]);
        }
        export_distribution(feats, flags, c.seed,
                            join_path(c.out_dir, "distribution.csv"));
        std::printf("distribution: %zu points -> distribution.csv\n",
                    feats.size());
        m.outputs = {"distribution.csv"};
    } else {
        throw UsageError("unknown analyze mode: " + mode);
    }
    finish(m, c);
    return m;
}

// One sweep point: the axis values overriding the base config.
struct SweepPoint {
    std::optional<int> depth;
    std::optional<double> group_ratio;
    std::optional<MixRatio> mix;
    std::optional<double> noise_b;
    std::optional<double> trunc_r;
};

std::vector<SweepPoint> expand_axes(const SweepAxes& s) {
    std::vector<SweepPoint> pts(1);
    auto cross = [&pts](auto&& values, auto&& set) {
        if (values.empty()) return;
        std::vector<SweepPoint> next;
        for (const SweepPoint& p : pts)
            for (const auto& v : values) {
                SweepPoint q = p;
                set(q, v);
                next.push_back(q);
            }
        pts = std::move(next);
    };
    cross(s.depths, [](SweepPoint& p, int v) { p.depth = v; });
    cross(s.group_ratios, [](SweepPoint& p, double v) { p.group_ratio = v; });
    cross(s.mix_ratios, [](SweepPoint& p, const MixRatio& v) { p.mix = v; });
    cross(s.noise_scales, [](SweepPoint& p, double v) { p.noise_b = v; });
    cross(s.truncation_ratios, [](SweepPoint& p, double v) { p.trunc_r = v; });
    return pts;
}

RunManifest stage_sweep(const ExperimentConfig& c) {
    if (c.attacks.size() != 1)
        throw ConfigError("sweep needs exactly one attack");
    if (c.defenses.size() > 1)
        throw ConfigError("sweep takes at most one defense");
    const bool defended = !c.defenses.empty();
    if (!c.sweep.noise_scales.empty() &&
        (!defended || (c.defenses[0].method != DefenseMethod::noisy_posterior &&
                       c.defenses[0].method != DefenseMethod::noisy_embedding)))
        throw ConfigError("sweep.noise_scales needs a noisy defense");
    if (!c.sweep.truncation_ratios.empty() &&
        (!defended || c.defenses[0].method != DefenseMethod::truncation))
        throw ConfigError("sweep.truncation_ratios needs a truncation defense");
    if (!c.sweep.mix_ratios.empty() && !uses_partial(c.attacks[0].id))
        throw ConfigError("sweep.mix_ratios needs a mixed-knowledge attack");

    Graph target = resolve_target(c);
    AdversaryKnowledge k = build_knowledge(c, target);
    const GnnConfig& cfg = need_gnn(c);

    std::vector<SweepPoint> pts = expand_axes(c.sweep);
    const std::size_t per_point = c.seeds.size();
    const std::size_t total = pts.size() * per_point;
    std::vector<std::string> rows(total);

    auto run_one = [&](std::size_t t) {
        const SweepPoint& p = pts[t / per_point];
        std::uint64_t s = c.seeds[t % per_point];
        GnnConfig pcfg = cfg;
        if (p.depth) pcfg.hidden_layers = *p.depth;
        AttackSpec a = c.attacks[0];
        if (p.group_ratio) a.planted = PlantedRatios{*p.group_ratio, 1.0 - *p.group_ratio};
        AdversaryKnowledge pk = k;
        if (p.mix) pk.mix_ratio = *p.mix;

        if (defended) {
            DefenseSpec d = c.defenses[0];
            if (p.noise_b) d.b = *p.noise_b;
            if (p.trunc_r) d.r = *p.trunc_r;
            DefenseResult res = evaluate_defense(d, a, pk, target, pcfg, s);
            rows[t] = to_string(d.method) + ',' + format_double(d.param()) +
                      ',' + attack_to_string(a.id) + ',' +
                      format_double(res.attack_accuracy) + ',' +
                      format_double(res.target_accuracy) + ',' +
                      std::to_string(s);
        } else {
            AttackResult r = run_attack(a, pk, target, pcfg, s);
            auto cell = [](const std::optional<double>& o) {
                return o ? format_double(*o) : std::string();
            };
            rows[t] = std::to_string(t / per_point) + ',' +
                      (p.depth ? std::to_string(*p.depth) : std::string()) +
                      ',' + cell(p.group_ratio) + ',' +
                      (p.mix ? p.mix->to_string() : std::string()) + ',' +
                      attack_to_string(a.id) + ',' + std::to_string(s) + ',' +
                      format_double(r.accuracy) + ',' + c.config_hash;
        }
    };

    // Outer pool owns the parallelism; the per-sample pool inside the library
    // is pinned to one thread so the total stays bounded by jobs.
    int jobs = std::max(1, c.jobs);
    set_worker_threads(1);
    std::exception_ptr first_error;
    if (jobs == 1 || total <= 1) {
        try {
            for (std::size_t t = 0; t < total; ++t) run_one(t);
        } catch (...) {
            first_error = std::current_exception();
        }
    } else {
        std::atomic<std::size_t> next{0};
        std::atomic<bool> failed{false};
        std::mutex err_mu;
        auto worker = [&] {
            while (!failed.load()) {
                std::size_t t = next.fetch_add(1);
                if (t >= total) break;
                try {
                    run_one(t);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(err_mu);
                    if (!first_error) first_error = std::current_exception();
                    failed.store(true);
                }
            }
        };
        std::vector<std::thread> threads;
        int nthreads = static_cast<int>(
            std::min(static_cast<std::size_t>(jobs), total));
        for (int w = 0; w < nthreads; ++w) threads.emplace_back(worker);
        for (auto& th : threads) th.join();
    }
    set_worker_threads(0);
    if (first_error) std::rethrow_exception(first_error);

    std::string name = defended ? "defense_results.csv" : "results.csv";
    std::string csv =
        defended ? "method,param,attack_id,attack_acc,target_acc,seed\n"
                 : "point,depth,group_ratio,mix_ratio,attack_id,seed,accuracy,"
                   "config_hash\n";
    for (const std::string& row : rows) csv += row + '\n';
    write_text_file(join_path(c.out_dir, name), csv);
    std::printf("sweep: %zu points x %zu seeds -> %s\n", pts.size(), per_point,
                name.c_str());

    RunManifest m = base_manifest(c);
    m.seeds = c.seeds;
    m.outputs = {name};
    finish(m, c);
    return m;
}

}  // namespace

RunManifest run(const ExperimentConfig& cfg, const std::string& subcommand) {
    std::filesystem::create_directories(cfg.out_dir);
    auto t0 = std::chrono::steady_clock::now();
    RunManifest m;
    if (subcommand == "synth")
        m = stage_synth(cfg);
    else if (subcommand == "train")
        m = stage_train(cfg);
    else if (subcommand == "attack")
        m = stage_attack(cfg);
    else if (subcommand == "defend")
        m = stage_defend(cfg);
    else if (subcommand == "sweep")
        m = stage_sweep(cfg);
    else if (subcommand.rfind("analyze:", 0) == 0)
        m = stage_analyze(cfg, subcommand.substr(8));
    else
        throw UsageError("unknown subcommand: " + subcommand);
    m.wall_clock_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    return m;
}

}  // namespace gpia
