#include "gpia/graph.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "gpia/errors.hpp"
#include "gpia/io.hpp"
#include "gpia/rng.hpp"

namespace gpia {

Comparator comparator_from_string(const std::string& s) {
    if (s == "<") return Comparator::lt;
    if (s == "<=" || s == "≤") return Comparator::le;
    if (s == ">") return Comparator::gt;
    if (s == ">=" || s == "≥") return Comparator::ge;
    if (s == "=" || s == "==") return Comparator::eq;
    if (s == "!=" || s == "≠") return Comparator::ne;
    throw ParseError("unknown comparator: " + s);
}

std::string comparator_to_string(Comparator c) {
    switch (c) {
        case Comparator::lt: return "<";
        case Comparator::le: return "<=";
        case Comparator::gt: return ">";
        case Comparator::ge: return ">=";
        case Comparator::eq: return "=";
        case Comparator::ne: return "!=";
    }
    throw RangeError("bad comparator enum");
}

bool GroupPredicate::matches_node(int v) const {
    if (kind != Kind::value)
        throw SpecError("node-level group predicate must name a single value");
    return v == value;
}

bool GroupPredicate::matches_link(int a, int b) const {
    switch (kind) {
        case Kind::value:
            throw SpecError("link-level group predicate cannot be a single value");
        case Kind::same: return a == b;
        case Kind::diff: return a != b;
        case Kind::pair:
            return (a == pair[0] && b == pair[1]) || (a == pair[1] && b == pair[0]);
    }
    throw RangeError("bad predicate kind");
}

bool GroupPredicate::operator==(const GroupPredicate& o) const {
    if (kind != o.kind) return false;
    if (kind == Kind::value) return value == o.value;
    if (kind == Kind::pair)
        return (pair == o.pair) ||
               (pair[0] == o.pair[1] && pair[1] == o.pair[0]);
    return true;
}

namespace {

GroupPredicate predicate_from_json(const nlohmann::json& j, PropertyLevel level) {
    GroupPredicate g;
    if (level == PropertyLevel::node) {
        if (!j.is_number_integer())
            throw ParseError("node-level group must be an integer value");
        g.kind = GroupPredicate::Kind::value;
        g.value = j.get<int>();
        return g;
    }
    if (j.is_string()) {
        std::string s = j.get<std::string>();
        if (s == "same") { g.kind = GroupPredicate::Kind::same; return g; }
        if (s == "diff") { g.kind = GroupPredicate::Kind::diff; return g; }
        throw ParseError("link-level group string must be 'same' or 'diff'");
    }
    if (j.is_array() && j.size() == 2) {
        g.kind = GroupPredicate::Kind::pair;
        g.pair = {j[0].get<int>(), j[1].get<int>()};
        return g;
    }
    throw ParseError("link-level group must be 'same', 'diff' or a 2-array");
}

nlohmann::json predicate_to_json(const GroupPredicate& g, PropertyLevel level) {
    if (level == PropertyLevel::node) return g.value;
    switch (g.kind) {
        case GroupPredicate::Kind::same: return "same";
        case GroupPredicate::Kind::diff: return "diff";
        case GroupPredicate::Kind::pair: return nlohmann::json{g.pair[0], g.pair[1]};
        default: throw SpecError("node-value predicate in a link-level spec");
    }
}

}  // namespace

PropertySpec PropertySpec::from_json(const nlohmann::json& j) {
    PropertySpec p;
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string& key = it.key();
        if (key != "level" && key != "lhs" && key != "rhs" &&
            key != "comparator" && key != "property_col")
            throw ParseError("unknown PropertySpec field: " + key);
    }
    std::string level = j.at("level").get<std::string>();
    if (level == "node") p.level = PropertyLevel::node;
    else if (level == "link") p.level = PropertyLevel::link;
    else throw ParseError("PropertySpec level must be 'node' or 'link'");
    p.lhs = predicate_from_json(j.at("lhs"), p.level);
    p.rhs = predicate_from_json(j.at("rhs"), p.level);
    p.cmp = comparator_from_string(j.at("comparator").get<std::string>());
    p.property_col = j.at("property_col").get<int>();
    p.validate();
    return p;
}

nlohmann::json PropertySpec::to_json() const {
    return nlohmann::json{
        {"level", level == PropertyLevel::node ? "node" : "link"},
        {"lhs", predicate_to_json(lhs, level)},
        {"rhs", predicate_to_json(rhs, level)},
        {"comparator", comparator_to_string(cmp)},
        {"property_col", property_col}};
}

void PropertySpec::validate() const {
    if (lhs == rhs) throw SpecError("lhs and rhs groups must differ");
    if (property_col < 0) throw RangeError("property_col must be >= 0");
    if (level == PropertyLevel::node) {
        if (lhs.kind != GroupPredicate::Kind::value ||
            rhs.kind != GroupPredicate::Kind::value)
            throw SpecError("node-level groups must name single values");
    } else {
        if (lhs.kind == GroupPredicate::Kind::value ||
            rhs.kind == GroupPredicate::Kind::value)
            throw SpecError("link-level groups must be same/diff/pair predicates");
    }
}

PropertySpec PropertySpec::node_count(int lhs_value, int rhs_value, Comparator c,
                                      int col) {
    PropertySpec p;
    p.level = PropertyLevel::node;
    p.lhs.kind = GroupPredicate::Kind::value;
    p.lhs.value = lhs_value;
    p.rhs.kind = GroupPredicate::Kind::value;
    p.rhs.value = rhs_value;
    p.cmp = c;
    p.property_col = col;
    return p;
}

int Graph::property_value(int node) const {
    return static_cast<int>(std::llround(features(node, property_col)));
}

bool Graph::has_edge(int u, int v) const {
    if (u > v) std::swap(u, v);
    return std::binary_search(edges.begin(), edges.end(), std::make_pair(u, v));
}

std::vector<std::vector<int>> Graph::adjacency() const {
    std::vector<std::vector<int>> adj(static_cast<std::size_t>(n));
    for (auto [u, v] : edges) {
        adj[static_cast<std::size_t>(u)].push_back(v);
        adj[static_cast<std::size_t>(v)].push_back(u);
    }
    return adj;
}

void Graph::validate() const {
    if (n < 0) throw ConsistencyError("negative node count");
    if (features.rows() != n)
        throw ConsistencyError("feature row count does not match n");
    if (static_cast<int>(labels.size()) != n)
        throw ConsistencyError("label count does not match n");
    if (property_col < 0 || property_col >= num_features())
        throw RangeError("property_col out of range");
    std::pair<int, int> prev{-1, -1};
    for (auto [u, v] : edges) {
        if (u < 0 || v < 0 || u >= n || v >= n)
            throw RangeError("edge endpoint out of range");
        if (u == v) throw ConsistencyError("self-loop present");
        if (u > v) throw ConsistencyError("edge not normalized (u < v expected)");
        if (std::make_pair(u, v) <= prev)
            throw ConsistencyError("edges not sorted/unique");
        prev = {u, v};
    }
}

Graph Graph::induced(const std::vector<int>& nodes) const {
    Graph sub;
    sub.n = static_cast<int>(nodes.size());
    sub.features.resize(sub.n, features.cols());
    sub.labels.resize(static_cast<std::size_t>(sub.n));
    sub.property_col = property_col;
    sub.property_values = property_values;
    std::unordered_map<int, int> index;
    index.reserve(nodes.size() * 2);
    for (int i = 0; i < sub.n; ++i) {
        int v = nodes[static_cast<std::size_t>(i)];
        if (v < 0 || v >= n) throw RangeError("induced node id out of range");
        sub.features.row(i) = features.row(v);
        sub.labels[static_cast<std::size_t>(i)] = labels[static_cast<std::size_t>(v)];
        index.emplace(v, i);
    }
    if (index.size() != nodes.size())
        throw ConsistencyError("induced node ids must be distinct");
    if (!std::is_sorted(nodes.begin(), nodes.end()))
        throw ConsistencyError("induced node ids must be sorted");
    for (auto [u, v] : edges) {
        auto iu = index.find(u);
        if (iu == index.end()) continue;
        auto iv = index.find(v);
        if (iv == index.end()) continue;
        int a = iu->second, b = iv->second;
        if (a > b) std::swap(a, b);
        sub.edges.emplace_back(a, b);
    }
    std::sort(sub.edges.begin(), sub.edges.end());
    return sub;
}

Graph load_graph(const std::string& edge_path, const std::string& feature_path,
                 int property_col) {
    Graph g;
    g.property_col = property_col;

    // Feature CSV first; it fixes n.
    std::vector<std::string> flines = split(read_text_file(feature_path), '\n');
    if (!flines.empty() && flines.back().empty()) flines.pop_back();
    if (flines.empty()) throw ParseError(feature_path + ": empty feature file");
    std::vector<std::string> header = split(trim(flines[0]), ',');
    if (header.size() < 3 || header.front() != "node_id" || header.back() != "label")
        throw ParseError(feature_path + ":1: header must be node_id,f0,...,label");
    int d = static_cast<int>(header.size()) - 2;
    for (int c = 0; c < d; ++c) {
        if (header[static_cast<std::size_t>(c) + 1] != "f" + std::to_string(c))
            throw ParseError(feature_path + ":1: feature columns must be f0..f" +
                             std::to_string(d - 1));
    }
    if (property_col < 0 || property_col >= d)
        throw RangeError("property_col out of range for " + std::to_string(d) +
                         " features");
    g.n = static_cast<int>(flines.size()) - 1;
    g.features.resize(g.n, d);
    g.labels.resize(static_cast<std::size_t>(g.n));
    for (int i = 0; i < g.n; ++i) {
        int lineno = i + 2;
        std::vector<std::string> cells = split(trim(flines[static_cast<std::size_t>(i) + 1]), ',');
        if (static_cast<int>(cells.size()) != d + 2)
            throw ParseError(feature_path + ":" + std::to_string(lineno) +
                             ": expected " + std::to_string(d + 2) + " cells");
        try {
            if (std::stoi(cells[0]) != i)
                throw ConsistencyError(feature_path + ":" + std::to_string(lineno) +
                                       ": rows must be sorted by node_id with one row per node");
            for (int c = 0; c < d; ++c)
                g.features(i, c) = std::stod(cells[static_cast<std::size_t>(c) + 1]);
            g.labels[static_cast<std::size_t>(i)] = std::stoi(cells.back());
        } catch (const std::invalid_argument&) {
            throw ParseError(feature_path + ":" + std::to_string(lineno) +
                             ": malformed number");
        } catch (const std::out_of_range&) {
            throw ParseError(feature_path + ":" + std::to_string(lineno) +
                             ": number out of range");
        }
    }

    std::vector<std::string> elines = split(read_text_file(edge_path), '\n');
    std::set<std::pair<int, int>> seen;
    for (std::size_t li = 0; li < elines.size(); ++li) {
        std::string line = trim(elines[li]);
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        long u, v;
        if (!(ss >> u >> v))
            throw ParseError(edge_path + ":" + std::to_string(li + 1) +
                             ": expected 'u<TAB>v'");
        std::string rest;
        if (ss >> rest)
            throw ParseError(edge_path + ":" + std::to_string(li + 1) +
                             ": trailing content");
        if (u == v)
            throw ParseError(edge_path + ":" + std::to_string(li + 1) +
                             ": self-loop " + std::to_string(u));
        if (u < 0 || v < 0 || u >= g.n || v >= g.n)
            throw RangeError(edge_path + ":" + std::to_string(li + 1) +
                             ": node id out of range (n=" + std::to_string(g.n) + ")");
        int a = static_cast<int>(std::min(u, v)), b = static_cast<int>(std::max(u, v));
        if (!seen.emplace(a, b).second)
            throw ParseError(edge_path + ":" + std::to_string(li + 1) +
                             ": duplicate edge");
    }
    g.edges.assign(seen.begin(), seen.end());

    std::set<int> values;
    for (int i = 0; i < g.n; ++i) values.insert(g.property_value(i));
    g.property_values.assign(values.begin(), values.end());
    g.validate();
    return g;
}

void save_graph(const Graph& g, const std::string& edge_path,
                const std::string& feature_path) {
    std::string edges = "# u\tv\n";
    for (auto [u, v] : g.edges)
        edges += std::to_string(u) + "\t" + std::to_string(v) + "\n";
    write_text_file(edge_path, edges);

    int d = g.num_features();
    std::string csv = "node_id";
    for (int c = 0; c < d; ++c) csv += ",f" + std::to_string(c);
    csv += ",label\n";
    for (int i = 0; i < g.n; ++i) {
        csv += std::to_string(i);
        for (int c = 0; c < d; ++c) csv += "," + format_double(g.features(i, c));
        csv += "," + std::to_string(g.labels[static_cast<std::size_t>(i)]) + "\n";
    }
    write_text_file(feature_path, csv);
}

namespace {

void check_declared(const Graph& g, const PropertySpec& p) {
    auto declared = [&](int v) {
        return std::binary_search(g.property_values.begin(),
                                  g.property_values.end(), v);
    };
    auto check_pred = [&](const GroupPredicate& gp) {
        if (gp.kind == GroupPredicate::Kind::value && !declared(gp.value))
            throw SpecError("group value " + std::to_string(gp.value) +
                            " absent from the declared value set");
        if (gp.kind == GroupPredicate::Kind::pair)
            for (int v : gp.pair)
                if (!declared(v))
                    throw SpecError("group value " + std::to_string(v) +
                                    " absent from the declared value set");
    };
    check_pred(p.lhs);
    check_pred(p.rhs);
}

}  // namespace

std::pair<long, long> property_counts(const Graph& g, const PropertySpec& p) {
    p.validate();
    check_declared(g, p);
    long lhs = 0, rhs = 0;
    if (p.level == PropertyLevel::node) {
        for (int i = 0; i < g.n; ++i) {
            int v = g.property_value(i);
            if (p.lhs.matches_node(v)) ++lhs;
            if (p.rhs.matches_node(v)) ++rhs;
        }
    } else {
        for (auto [u, v] : g.edges) {
            int a = g.property_value(u), b = g.property_value(v);
            if (p.lhs.matches_link(a, b)) ++lhs;
            if (p.rhs.matches_link(a, b)) ++rhs;
        }
    }
    return {lhs, rhs};
}

bool compare_counts(long lhs, long rhs, Comparator c) {
    switch (c) {
        case Comparator::lt: return lhs < rhs;
        case Comparator::le: return lhs <= rhs;
        case Comparator::gt: return lhs > rhs;
        case Comparator::ge: return lhs >= rhs;
        case Comparator::eq: return lhs == rhs;
        case Comparator::ne: return lhs != rhs;
    }
    throw RangeError("bad comparator enum");
}

bool evaluate_property(const Graph& g, const PropertySpec& p) {
    auto [lhs, rhs] = property_counts(g, p);
    return compare_counts(lhs, rhs, p.cmp);
}

double group_size_ratio(const Graph& g, const PropertySpec& p) {
    auto [lhs, rhs] = property_counts(g, p);
    if (rhs == 0)
        throw PreconditionError("group_size_ratio: rhs count is zero (division by zero)");
    return static_cast<double>(lhs) / static_cast<double>(rhs);
}

namespace {

constexpr int kAttemptsPerSample = 50;

SubgraphSample make_sample(const Graph& g, std::vector<int> nodes,
                           const PropertySpec& p) {
    SubgraphSample s;
    s.graph = g.induced(nodes);
    s.node_ids = std::move(nodes);
    s.flag = evaluate_property(s.graph, p);
    return s;
}

}  // namespace

std::vector<SubgraphSample> sample_subgraphs(const Graph& g, int count, int size,
                                             bool want_flag, const PropertySpec& p,
                                             std::uint64_t seed,
                                             const std::vector<int>* pool) {
    if (count < 1) throw PreconditionError("sample_subgraphs: count must be >= 1");
    std::vector<int> all;
    if (!pool) {
        all.resize(static_cast<std::size_t>(g.n));
        std::iota(all.begin(), all.end(), 0);
        pool = &all;
    }
    if (size > static_cast<int>(pool->size()) || size < 1)
        throw PreconditionError("sample_subgraphs: size exceeds candidate pool");

    std::vector<SubgraphSample> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int k = 0; k < count; ++k) {
        Rng rng(sub_seed(seed, static_cast<std::uint64_t>(k)));
        bool found = false;
        for (int attempt = 0; attempt < kAttemptsPerSample; ++attempt) {
            SubgraphSample s = make_sample(g, rng.sample_from(*pool, size), p);
            if (s.flag == want_flag) {
                s.parent_id = k;
                out.push_back(std::move(s));
                found = true;
                break;
            }
        }
        if (!found)
            throw SamplingError(
                "sample_subgraphs: no conforming subset after " +
                std::to_string(kAttemptsPerSample) + " attempts for sample " +
                std::to_string(k) + "; consider densify or different sizes");
    }
    return out;
}

std::vector<SubgraphSample> sample_subgraphs_planted(
    const Graph& g, int count, int size, bool want_flag, const PropertySpec& p,
    double ratio, std::uint64_t seed, const std::vector<int>* pool) {
    if (count < 1) throw PreconditionError("planted sampler: count must be >= 1");
    if (p.level != PropertyLevel::node)
        throw UsageError("planted sampler supports node-level properties only");
    if (ratio < 0.0 || ratio > 1.0)
        throw RangeError("planted sampler: ratio must lie in [0,1]");

    std::vector<int> all;
    if (!pool) {
        all.resize(static_cast<std::size_t>(g.n));
        std::iota(all.begin(), all.end(), 0);
        pool = &all;
    }
    std::vector<int> lhs_pool, other_pool;
    for (int v : *pool) {
        if (p.lhs.matches_node(g.property_value(v))) lhs_pool.push_back(v);
        else other_pool.push_back(v);
    }

    std::vector<SubgraphSample> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int k = 0; k < count; ++k) {
        Rng rng(sub_seed(seed, static_cast<std::uint64_t>(k) + 0x9d1ed5u));
        int lhs_count = static_cast<int>(std::llround(ratio * size));
        bool found = false;
        for (int attempt = 0; attempt < kAttemptsPerSample; ++attempt) {
            lhs_count = std::clamp(lhs_count, 0, size);
            if (lhs_count > static_cast<int>(lhs_pool.size()) ||
                size - lhs_count > static_cast<int>(other_pool.size()))
                throw SamplingError("planted sampler: group pool smaller than the planted share");
            std::vector<int> nodes = rng.sample_from(lhs_pool, lhs_count);
            std::vector<int> rest = rng.sample_from(other_pool, size - lhs_count);
            nodes.insert(nodes.end(), rest.begin(), rest.end());
            std::sort(nodes.begin(), nodes.end());
            SubgraphSample s = make_sample(g, std::move(nodes), p);
            if (s.flag == want_flag) {
                s.parent_id = k;
                out.push_back(std::move(s));
                found = true;
                break;
            }
            // Nudge the planted share toward the wanted side of the comparison.
            auto [lc, rc] = property_counts(s.graph, p);
            bool currently = compare_counts(lc, rc, p.cmp);
            int step = 0;
            switch (p.cmp) {
                case Comparator::gt: case Comparator::ge: step = want_flag ? 1 : -1; break;
                case Comparator::lt: case Comparator::le: step = want_flag ? -1 : 1; break;
                case Comparator::eq: step = want_flag == currently ? 0 : (lc < rc ? 1 : -1); break;
                case Comparator::ne: step = (lc < rc) ? -1 : 1; break;
            }
            lhs_count += step;
        }
        if (!found)
            throw SamplingError("planted sampler: no conforming subset after " +
                                std::to_string(kAttemptsPerSample) +
                                " attempts for sample " + std::to_string(k));
    }
    return out;
}

namespace {

struct UnionFind {
    std::vector<int> parent;
    explicit UnionFind(int n) : parent(static_cast<std::size_t>(n)) {
        std::iota(parent.begin(), parent.end(), 0);
    }
    int find(int x) {
        while (parent[static_cast<std::size_t>(x)] != x) {
            parent[static_cast<std::size_t>(x)] =
                parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(x)])];
            x = parent[static_cast<std::size_t>(x)];
        }
        return x;
    }
    void unite(int a, int b) { parent[static_cast<std::size_t>(find(a))] = find(b); }
};

}  // namespace

SplitResult split_train_test(const std::vector<SubgraphSample>& samples,
                             double train_frac, double max_node_overlap,
                             bool forbid_link_overlap, std::uint64_t seed) {
    if (train_frac <= 0.0 || train_frac >= 1.0)
        throw PreconditionError("split_train_test: train_frac must lie in (0,1)");
    int m = static_cast<int>(samples.size());
    if (m < 2) throw PreconditionError("split_train_test: need at least 2 samples");

    // Samples sharing an edge (hard, when forbidden) or a node (hard only at
    // zero budget) must land on the same side; union-find groups them.
    UnionFind uf(m);
    if (forbid_link_overlap) {
        std::unordered_map<std::uint64_t, int> edge_owner;
        for (int i = 0; i < m; ++i) {
            const SubgraphSample& s = samples[static_cast<std::size_t>(i)];
            for (auto [a, b] : s.graph.edges) {
                int u = s.node_ids[static_cast<std::size_t>(a)];
                int v = s.node_ids[static_cast<std::size_t>(b)];
                if (u > v) std::swap(u, v);
                std::uint64_t key = (static_cast<std::uint64_t>(u) << 32) |
                                    static_cast<std::uint64_t>(v);
                auto [it, inserted] = edge_owner.emplace(key, i);
                if (!inserted) uf.unite(i, it->second);
            }
        }
    }
    if (max_node_overlap <= 0.0) {
        std::unordered_map<int, int> node_owner;
        for (int i = 0; i < m; ++i)
            for (int v : samples[static_cast<std::size_t>(i)].node_ids) {
                auto [it, inserted] = node_owner.emplace(v, i);
                if (!inserted) uf.unite(i, it->second);
            }
    }

    std::unordered_map<int, int> comp_index;
    std::vector<std::vector<int>> comps;
    for (int i = 0; i < m; ++i) {
        int root = uf.find(i);
        auto [it, inserted] = comp_index.emplace(root, static_cast<int>(comps.size()));
        if (inserted) comps.emplace_back();
        comps[static_cast<std::size_t>(it->second)].push_back(i);
    }

    long pos_total = 0;
    for (const auto& s : samples) pos_total += s.flag ? 1 : 0;
    long neg_total = m - pos_total;
    int train_total = static_cast<int>(std::llround(train_frac * m));
    train_total = std::clamp(train_total, 1, m - 1);
    long train_pos_l = std::llround(train_frac * static_cast<double>(pos_total));
    long lo = std::max(0L, static_cast<long>(train_total) - neg_total);
    long hi = std::min(pos_total, static_cast<long>(train_total));
    int train_pos = static_cast<int>(std::clamp(train_pos_l, lo, hi));
    int train_neg = train_total - train_pos;

    Rng rng(sub_seed(seed, 0x5b117));
    constexpr int kSplitAttempts = 1000;
    std::vector<int> order(comps.size());
    std::iota(order.begin(), order.end(), 0);

    for (int attempt = 0; attempt < kSplitAttempts; ++attempt) {
        rng.shuffle(order);
        int need_pos = train_pos, need_neg = train_neg;
        std::vector<char> in_train(static_cast<std::size_t>(m), 0);
        for (int ci : order) {
            const auto& comp = comps[static_cast<std::size_t>(ci)];
            int cpos = 0, cneg = 0;
            for (int i : comp) (samples[static_cast<std::size_t>(i)].flag ? cpos : cneg)++;
            if (cpos <= need_pos && cneg <= need_neg) {
                for (int i : comp) in_train[static_cast<std::size_t>(i)] = 1;
                need_pos -= cpos;
                need_neg -= cneg;
            }
            if (need_pos == 0 && need_neg == 0) break;
        }
        if (need_pos != 0 || need_neg != 0) continue;

        std::unordered_set<int> train_nodes;
        std::unordered_set<std::uint64_t> train_edges;
        for (int i = 0; i < m; ++i) {
            if (!in_train[static_cast<std::size_t>(i)]) continue;
            const SubgraphSample& s = samples[static_cast<std::size_t>(i)];
            train_nodes.insert(s.node_ids.begin(), s.node_ids.end());
            for (auto [a, b] : s.graph.edges) {
                int u = s.node_ids[static_cast<std::size_t>(a)];
                int v = s.node_ids[static_cast<std::size_t>(b)];
                if (u > v) std::swap(u, v);
                train_edges.insert((static_cast<std::uint64_t>(u) << 32) |
                                   static_cast<std::uint64_t>(v));
            }
        }
        std::unordered_set<int> test_nodes;
        long shared_edges = 0;
        for (int i = 0; i < m; ++i) {
            if (in_train[static_cast<std::size_t>(i)]) continue;
            const SubgraphSample& s = samples[static_cast<std::size_t>(i)];
            test_nodes.insert(s.node_ids.begin(), s.node_ids.end());
            for (auto [a, b] : s.graph.edges) {
                int u = s.node_ids[static_cast<std::size_t>(a)];
                int v = s.node_ids[static_cast<std::size_t>(b)];
                if (u > v) std::swap(u, v);
                if (train_edges.count((static_cast<std::uint64_t>(u) << 32) |
                                      static_cast<std::uint64_t>(v)))
                    ++shared_edges;
            }
        }
        if (forbid_link_overlap && shared_edges != 0) continue;
        long overlapping = 0;
        for (int v : test_nodes) overlapping += train_nodes.count(v) ? 1 : 0;
        double overlap = test_nodes.empty()
                             ? 0.0
                             : static_cast<double>(overlapping) /
                                   static_cast<double>(test_nodes.size());
        if (overlap > max_node_overlap) continue;

        SplitResult res;
        for (int i = 0; i < m; ++i) {
            if (in_train[static_cast<std::size_t>(i)]) {
                res.train.push_back(samples[static_cast<std::size_t>(i)]);
                res.train_idx.push_back(i);
            } else {
                res.test.push_back(samples[static_cast<std::size_t>(i)]);
                res.test_idx.push_back(i);
            }
        }
        res.report.node_overlap = overlap;
        res.report.shared_edges = shared_edges;
        res.report.train_size = static_cast<int>(res.train.size());
        res.report.test_size = static_cast<int>(res.test.size());
        return res;
    }
    throw SplitError("split_train_test: constraints unsatisfiable within " +
                     std::to_string(kSplitAttempts) + " attempts");
}

SubgraphSample densify(const SubgraphSample& s, int extra_edges,
                       const PropertySpec& p, bool target_flag,
                       std::uint64_t seed) {
    if (extra_edges < 1)
        throw PreconditionError("densify: extra_edges must be >= 1");
    SubgraphSample out = s;
    out.flag = evaluate_property(out.graph, p);
    if (out.flag == target_flag) return out;

    int n = out.graph.n;
    std::vector<std::pair<int, int>> absent;
    for (int u = 0; u < n; ++u)
        for (int v = u + 1; v < n; ++v)
            if (!out.graph.has_edge(u, v)) absent.emplace_back(u, v);
    if (absent.empty())
        throw DensifyError("densify: subgraph is complete, no edge can be added");

    // Shuffle once and add in order: each successive pick is uniform over the
    // remaining absent edges.
    Rng rng(sub_seed(seed, 0xd355ULL));
    rng.shuffle(absent);
    int budget = static_cast<int>(
        std::min<std::size_t>(static_cast<std::size_t>(extra_edges), absent.size()));
    for (int i = 0; i < budget; ++i) {
        out.graph.edges.push_back(absent[static_cast<std::size_t>(i)]);
        std::sort(out.graph.edges.begin(), out.graph.edges.end());
        out.flag = evaluate_property(out.graph, p);
        if (out.flag == target_flag) return out;
    }
    throw DensifyError("densify: target flag unreachable within " +
                       std::to_string(extra_edges) + " extra edges");
}

SyntheticConfig SyntheticConfig::from_json(const nlohmann::json& j) {
    SyntheticConfig c;
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string& key = it.key();
        if (key == "n") c.n = it->get<int>();
        else if (key == "group_ratio") c.group_ratio = it->get<double>();
        else if (key == "rho") c.rho = it->get<double>();
        else if (key == "homophily") c.homophily = it->get<double>();
        else if (key == "avg_degree") c.avg_degree = it->get<double>();
        else if (key == "label_noise") c.label_noise = it->get<double>();
        else if (key == "classes") c.classes = it->get<int>();
        else if (key == "seed") c.seed = it->get<std::uint64_t>();
        else throw ParseError("unknown SyntheticConfig field: " + key);
    }
    c.validate();
    return c;
}

nlohmann::json SyntheticConfig::to_json() const {
    return nlohmann::json{{"n", n},
                          {"group_ratio", group_ratio},
                          {"rho", rho},
                          {"homophily", homophily},
                          {"avg_degree", avg_degree},
                          {"label_noise", label_noise},
                          {"classes", classes},
                          {"seed", seed}};
}

void SyntheticConfig::validate() const {
    if (n < 2) throw RangeError("synthetic: n must be >= 2");
    if (group_ratio <= 0.0 || group_ratio >= 1.0)
        throw RangeError("synthetic: group_ratio must lie in (0,1)");
    if (rho < 0.0 || rho > 1.0) throw RangeError("synthetic: rho must lie in [0,1]");
    if (homophily < 0.0 || homophily > 1.0)
        throw RangeError("synthetic: homophily must lie in [0,1]");
    if (avg_degree <= 0.0) throw RangeError("synthetic: avg_degree must be > 0");
    if (label_noise < 0.0 || label_noise >= 0.5)
        throw RangeError("synthetic: label_noise must lie in [0,0.5)");
    if (classes < 2) throw RangeError("synthetic: classes must be >= 2");
}

Graph generate_synthetic(const SyntheticConfig& cfg) {
    cfg.validate();
    Rng rng(sub_seed(cfg.seed, 0x5e17));
    Graph g;
    g.n = cfg.n;
    g.property_col = 0;
    g.property_values = {0, 1};
    constexpr int kNoiseCols = 4;
    int d = 2 + kNoiseCols;
    g.features.resize(g.n, d);
    g.labels.resize(static_cast<std::size_t>(g.n));

    std::vector<int> group(static_cast<std::size_t>(g.n));
    for (int i = 0; i < g.n; ++i) {
        group[static_cast<std::size_t>(i)] = rng.bernoulli(cfg.group_ratio) ? 1 : 0;
        g.features(i, 0) = group[static_cast<std::size_t>(i)];
        bool agree = rng.bernoulli((1.0 + cfg.rho) / 2.0);
        g.features(i, 1) = agree ? g.features(i, 0) : 1.0 - g.features(i, 0);
        for (int c = 0; c < kNoiseCols; ++c) g.features(i, 2 + c) = rng.normal();
    }

    std::vector<std::vector<int>> members(2);
    for (int i = 0; i < g.n; ++i)
        members[static_cast<std::size_t>(group[static_cast<std::size_t>(i)])].push_back(i);

    long target_edges = std::llround(cfg.n * cfg.avg_degree / 2.0);
    std::set<std::pair<int, int>> edge_set;
    long attempts_left = 20 * target_edges + 100;
    while (static_cast<long>(edge_set.size()) < target_edges && attempts_left-- > 0) {
        int u = rng.uniform_int(0, g.n - 1);
        const std::vector<int>& same = members[static_cast<std::size_t>(group[static_cast<std::size_t>(u)])];
        int v;
        if (rng.bernoulli(cfg.homophily) && same.size() > 1) {
            v = same[rng.uniform_index(same.size())];
        } else {
            v = rng.uniform_int(0, g.n - 1);
        }
        if (u == v) continue;
        int a = std::min(u, v), b = std::max(u, v);
        edge_set.emplace(a, b);
    }
    g.edges.assign(edge_set.begin(), edge_set.end());

    // Labels from the non-property columns: the correlated code dominates, one
    // noise column keeps classes from being a deterministic function of it.
    std::vector<double> score(static_cast<std::size_t>(g.n));
    for (int i = 0; i < g.n; ++i)
        score[static_cast<std::size_t>(i)] = 1.5 * (2.0 * g.features(i, 1) - 1.0) + g.features(i, 2);
    std::vector<double> sorted_scores = score;
    std::sort(sorted_scores.begin(), sorted_scores.end());
    for (int i = 0; i < g.n; ++i) {
        double s = score[static_cast<std::size_t>(i)];
        int cls = 0;
        for (int c = 1; c < cfg.classes; ++c) {
            double threshold = sorted_scores[static_cast<std::size_t>(
                std::min<long>(g.n - 1, std::llround(static_cast<double>(c) * g.n /
                                                     cfg.classes)))];
            if (s >= threshold) cls = c;
        }
        if (rng.bernoulli(cfg.label_noise)) {
            int other = rng.uniform_int(0, cfg.classes - 2);
            cls = (other >= cls) ? other + 1 : other;
        }
        g.labels[static_cast<std::size_t>(i)] = cls;
    }
    g.validate();
    return g;
}

}  // namespace gpia
