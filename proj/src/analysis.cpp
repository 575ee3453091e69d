#include "gpia/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gpia/errors.hpp"
#include "gpia/features.hpp"
#include "gpia/io.hpp"
#include "gpia/parallel.hpp"
#include "gpia/rng.hpp"

namespace gpia {

namespace {

constexpr double kInfTrainFrac = 0.8;
constexpr std::uint64_t kInfMaskStream = 0x1f7a;
constexpr std::uint64_t kGapMaskBase = 0x10af00000000ULL;
constexpr std::uint64_t kTsneStream = 0xd157;

int row_argmax(const Matrix& M, Eigen::Index i) {
    int best = 0;
    for (Eigen::Index j = 1; j < M.cols(); ++j)
        if (M(i, j) > M(i, best)) best = static_cast<int>(j);
    return best;
}

// Drops `v` from a full-graph mask and shifts the ids above it down.
std::vector<int> drop_and_shift(const std::vector<int>& mask, int v) {
    std::vector<int> out;
    out.reserve(mask.size());
    for (int id : mask)
        if (id != v) out.push_back(id > v ? id - 1 : id);
    return out;
}

Vector trained_gradient(const Graph& g, const GnnConfig& cfg,
                        const std::vector<int>& train_mask,
                        const std::vector<int>& eval_mask) {
    GnnModel model = train(g, cfg, train_mask, eval_mask).first;
    return gradient_vector(model, g, train_mask);
}

double node_influence_impl(const Graph& g, int v, const GnnConfig& cfg,
                           const std::vector<int>& tm,
                           const std::vector<int>& em, const Vector& full) {
    std::vector<int> rest;
    rest.reserve(static_cast<std::size_t>(g.n - 1));
    for (int i = 0; i < g.n; ++i)
        if (i != v) rest.push_back(i);
    Graph sub = g.induced(rest);
    Vector ablated =
        trained_gradient(sub, cfg, drop_and_shift(tm, v), drop_and_shift(em, v));
    return cosine_distance(ablated, full);
}

double edge_influence_impl(const Graph& g, std::size_t edge_index,
                           const GnnConfig& cfg, const std::vector<int>& tm,
                           const std::vector<int>& em, const Vector& full) {
    Graph sub = g;
    sub.edges.erase(sub.edges.begin() +
                    static_cast<std::ptrdiff_t>(edge_index));
    Vector ablated = trained_gradient(sub, cfg, tm, em);
    return cosine_distance(ablated, full);
}

}  // namespace

ElementKind element_from_string(const std::string& s) {
    if (s == "node") return ElementKind::node;
    if (s == "edge") return ElementKind::edge;
    throw ParseError("unknown element kind: " + s);
}

std::string to_string(ElementKind k) {
    return k == ElementKind::node ? "node" : "edge";
}

double cosine_distance(const Vector& a, const Vector& b) {
    if (a.size() != b.size())
        throw ShapeError("cosine_distance: length mismatch");
    double na = a.norm(), nb = b.norm();
    if (na == 0.0 && nb == 0.0) return 0.0;
    if (na == 0.0 || nb == 0.0) return 1.0;
    double c = a.dot(b) / (na * nb);
    return std::clamp(1.0 - c, 0.0, 2.0);
}

double influence_node(const Graph& g, int v, const GnnConfig& cfg,
                      std::uint64_t seed) {
    if (v < 0 || v >= g.n) throw RangeError("influence_node: node out of range");
    auto [tm, em] = make_masks(g.n, kInfTrainFrac, sub_seed(seed, kInfMaskStream));
    Vector full = trained_gradient(g, cfg, tm, em);
    return node_influence_impl(g, v, cfg, tm, em, full);
}

double influence_edge(const Graph& g, std::pair<int, int> e,
                      const GnnConfig& cfg, std::uint64_t seed) {
    int u = std::min(e.first, e.second), v = std::max(e.first, e.second);
    auto it = std::find(g.edges.begin(), g.edges.end(), std::make_pair(u, v));
    if (it == g.edges.end())
        throw PreconditionError("influence_edge: edge not present");
    auto [tm, em] = make_masks(g.n, kInfTrainFrac, sub_seed(seed, kInfMaskStream));
    Vector full = trained_gradient(g, cfg, tm, em);
    return edge_influence_impl(
        g, static_cast<std::size_t>(it - g.edges.begin()), cfg, tm, em, full);
}

InfluenceReport influence_report(const Graph& g, const PropertySpec& p,
                                 ElementKind kind, const GnnConfig& cfg,
                                 std::uint64_t seed) {
    p.validate();
    auto [tm, em] = make_masks(g.n, kInfTrainFrac, sub_seed(seed, kInfMaskStream));
    Vector full = trained_gradient(g, cfg, tm, em);

    InfluenceReport r;
    r.kind = kind;
    if (kind == ElementKind::node) {
        r.scores.assign(static_cast<std::size_t>(g.n), 0.0);
        r.groups.assign(static_cast<std::size_t>(g.n), -1);
        // a link-level property says nothing about single nodes; leave those
        // ungrouped instead of failing
        if (p.level == PropertyLevel::node)
            for (int v = 0; v < g.n; ++v) {
                int val = g.property_value(v);
                if (p.lhs.matches_node(val))
                    r.groups[static_cast<std::size_t>(v)] = 0;
                else if (p.rhs.matches_node(val))
                    r.groups[static_cast<std::size_t>(v)] = 1;
            }
        parallel_for(static_cast<int>(g.n), [&](int v) {
            r.scores[static_cast<std::size_t>(v)] =
                node_influence_impl(g, v, cfg, tm, em, full);
        });
    } else {
        std::size_t m = g.edges.size();
        r.scores.assign(m, 0.0);
        r.groups.assign(m, -1);
        if (p.level == PropertyLevel::link)
            for (std::size_t i = 0; i < m; ++i) {
                int va = g.property_value(g.edges[i].first);
                int vb = g.property_value(g.edges[i].second);
                if (p.lhs.matches_link(va, vb))
                    r.groups[i] = 0;
                else if (p.rhs.matches_link(va, vb))
                    r.groups[i] = 1;
            }
        parallel_for(static_cast<int>(m), [&](int i) {
            r.scores[static_cast<std::size_t>(i)] = edge_influence_impl(
                g, static_cast<std::size_t>(i), cfg, tm, em, full);
        });
    }

    double lhs_sum = 0.0, rhs_sum = 0.0;
    for (std::size_t i = 0; i < r.scores.size(); ++i) {
        if (r.groups[i] == 0) {
            lhs_sum += r.scores[i];
            ++r.lhs_count;
        } else if (r.groups[i] == 1) {
            rhs_sum += r.scores[i];
            ++r.rhs_count;
        }
    }
    if (r.lhs_count > 0) r.lhs_mean = lhs_sum / r.lhs_count;
    if (r.rhs_count > 0) r.rhs_mean = rhs_sum / r.rhs_count;
    return r;
}

DisparityReport group_metrics(const GnnModel& m, const Graph& g,
                              const PropertySpec& p,
                              const std::vector<int>& mask) {
    if (p.level != PropertyLevel::node)
        throw UsageError("group_metrics needs a node-level property");
    EmbeddingSet e = forward(m, g);
    DisparityReport rep;
    double loss[2] = {0.0, 0.0};
    int correct[2] = {0, 0}, count[2] = {0, 0};
    for (int v : mask) {
        if (v < 0 || v >= g.n)
            throw RangeError("group_metrics: mask id out of range");
        int val = g.property_value(v);
        int side;
        if (p.lhs.matches_node(val))
            side = 0;
        else if (p.rhs.matches_node(val))
            side = 1;
        else
            continue;
        int y = g.labels[static_cast<std::size_t>(v)];
        loss[side] -= std::log(std::max(e.O(v, y), 1e-12));
        correct[side] += row_argmax(e.O, v) == y ? 1 : 0;
        ++count[side];
    }
    if (count[0] == 0 || count[1] == 0)
        throw PreconditionError("group_metrics: a property group is empty "
                                "within the mask");
    rep.lhs = {loss[0] / count[0], static_cast<double>(correct[0]) / count[0],
               count[0]};
    rep.rhs = {loss[1] / count[1], static_cast<double>(correct[1]) / count[1],
               count[1]};
    rep.loss_gap = rep.lhs.loss - rep.rhs.loss;
    return rep;
}

double loss_gap_pos_neg(const std::vector<Graph>& pos,
                        const std::vector<Graph>& neg, const GnnConfig& cfg,
                        std::uint64_t seed) {
    if (pos.empty() || neg.empty())
        throw PreconditionError("loss_gap_pos_neg: both sides must be nonempty");
    std::vector<double> pl(pos.size(), 0.0), nl(neg.size(), 0.0);
    int total = static_cast<int>(pos.size() + neg.size());
    parallel_for(total, [&](int j) {
        bool positive = j < static_cast<int>(pos.size());
        std::size_t i = positive ? static_cast<std::size_t>(j)
                                 : static_cast<std::size_t>(j) - pos.size();
        const Graph& g = positive ? pos[i] : neg[i];
        auto [tm, em] = make_masks(
            g.n, kInfTrainFrac,
            sub_seed(seed, kGapMaskBase + static_cast<std::uint64_t>(i)));
        GnnModel model = train(g, cfg, tm, em).first;
        (positive ? pl[i] : nl[i]) = masked_loss(model, g, em);
    });
    double mp = std::accumulate(pl.begin(), pl.end(), 0.0) /
                static_cast<double>(pl.size());
    double mn = std::accumulate(nl.begin(), nl.end(), 0.0) /
                static_cast<double>(nl.size());
    return std::abs(mp - mn);
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2)
        throw PreconditionError("pearson: need equal lengths >= 2");
    double n = static_cast<double>(x.size());
    double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        double dx = x[i] - mx, dy = y[i] - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if (sxx == 0.0 || syy == 0.0)
        throw DegenerateError("pearson: constant input has no correlation");
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

std::vector<GapBucket> gap_buckets(
    const std::vector<std::pair<double, bool>>& samples) {
    if (samples.size() < 4)
        throw PreconditionError("gap_buckets: need at least 4 samples");
    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return samples[a].first < samples[b].first;
    });

    const char* labels[4] = {"Top-25%", "25%-50%", "50%-75%", "Last 25%"};
    std::size_t q = samples.size() / 4, r = samples.size() % 4;
    std::vector<GapBucket> out;
    std::size_t at = 0;
    for (std::size_t bidx = 0; bidx < 4; ++bidx) {
        std::size_t size = q + (bidx < r ? 1 : 0);
        GapBucket b;
        b.label = labels[bidx];
        b.count = static_cast<int>(size);
        for (std::size_t i = 0; i < size; ++i, ++at) {
            b.mean_gap += samples[order[at]].first;
            b.mean_accuracy += samples[order[at]].second ? 1.0 : 0.0;
        }
        b.mean_gap /= static_cast<double>(size);
        b.mean_accuracy /= static_cast<double>(size);
        out.push_back(std::move(b));
    }
    return out;
}

Matrix export_distribution(const std::vector<Vector>& features,
                           const std::vector<int>& flags, std::uint64_t seed,
                           const std::string& path) {
    if (features.size() < 4)
        throw PreconditionError("export_distribution: need at least 4 vectors");
    if (flags.size() != features.size())
        throw ShapeError("export_distribution: flags/features size mismatch");
    Eigen::Index d = features.front().size();
    if (d == 0) throw ShapeError("export_distribution: empty feature vectors");
    for (const Vector& f : features)
        if (f.size() != d)
            throw ShapeError("export_distribution: ragged feature lengths");

    Matrix X(static_cast<Eigen::Index>(features.size()), d);
    for (std::size_t i = 0; i < features.size(); ++i)
        X.row(static_cast<Eigen::Index>(i)) = features[i].transpose();
    double perp = std::min(30.0, static_cast<double>(X.rows()) / 4.0);
    Matrix Y = tsne(X, perp, 1000, sub_seed(seed, kTsneStream));

    std::string out = "x,y,flag\n";
    for (Eigen::Index i = 0; i < Y.rows(); ++i)
        out += format_double(Y(i, 0)) + ',' + format_double(Y(i, 1)) + ',' +
               std::to_string(flags[static_cast<std::size_t>(i)]) + '\n';
    write_text_file(path, out);
    return Y;
}

void export_influence_csv(const InfluenceReport& r, const std::string& path) {
    std::string out = "element,group,score\n";
    for (std::size_t i = 0; i < r.scores.size(); ++i) {
        const char* group = r.groups[i] == 0   ? "lhs"
                            : r.groups[i] == 1 ? "rhs"
                                               : "none";
        out += std::to_string(i) + ',' + group + ',' +
               format_double(r.scores[i]) + '\n';
    }
    write_text_file(path, out);
}

void export_gap_table_csv(const std::vector<GapBucket>& rows,
                          const std::string& path) {
    std::string out = "bucket,mean_gap,mean_accuracy,count\n";
    for (const GapBucket& b : rows)
        out += b.label + ',' + format_double(b.mean_gap) + ',' +
               format_double(b.mean_accuracy) + ',' + std::to_string(b.count) +
               '\n';
    write_text_file(path, out);
}

}  // namespace gpia
