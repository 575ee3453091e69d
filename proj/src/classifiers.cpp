#include "gpia/classifiers.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "gpia/errors.hpp"
#include "gpia/io.hpp"
#include "gpia/rng.hpp"

namespace gpia {

ClassifierKind classifier_from_string(const std::string& s) {
    if (s == "mlp") return ClassifierKind::mlp;
    if (s == "rf") return ClassifierKind::rf;
    if (s == "lr") return ClassifierKind::lr;
    throw ParseError("unknown classifier: " + s);
}

std::string classifier_to_string(ClassifierKind k) {
    switch (k) {
        case ClassifierKind::mlp: return "mlp";
        case ClassifierKind::rf: return "rf";
        case ClassifierKind::lr: return "lr";
    }
    throw RangeError("bad classifier enum");
}

void ClassifierConfig::validate() const {
    if (mlp_layers.empty()) throw ConfigError("mlp_layers must be non-empty");
    for (int w : mlp_layers)
        if (w < 1) throw ConfigError("mlp layer widths must be >= 1");
    if (mlp_epochs < 1) throw ConfigError("mlp_epochs must be >= 1");
    if (mlp_lr <= 0.0) throw ConfigError("mlp_lr must be > 0");
    if (n_trees < 1) throw ConfigError("n_trees must be >= 1");
    if (max_depth < 1) throw ConfigError("max_depth must be >= 1");
    if (min_leaf < 1) throw ConfigError("min_leaf must be >= 1");
    if (C <= 0.0) throw ConfigError("C must be > 0");
    if (max_iter < 1) throw ConfigError("max_iter must be >= 1");
    if (tol <= 0.0) throw ConfigError("tol must be > 0");
}

ClassifierConfig ClassifierConfig::from_json(const nlohmann::json& j) {
    ClassifierConfig c;
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string& key = it.key();
        if (key == "kind") c.kind = classifier_from_string(it->get<std::string>());
        else if (key == "mlp_layers") c.mlp_layers = it->get<std::vector<int>>();
        else if (key == "mlp_epochs") c.mlp_epochs = it->get<int>();
        else if (key == "mlp_lr") c.mlp_lr = it->get<double>();
        else if (key == "n_trees") c.n_trees = it->get<int>();
        else if (key == "max_depth") c.max_depth = it->get<int>();
        else if (key == "min_leaf") c.min_leaf = it->get<int>();
        else if (key == "C") c.C = it->get<double>();
        else if (key == "max_iter") c.max_iter = it->get<int>();
        else if (key == "tol") c.tol = it->get<double>();
        else throw ParseError("unknown ClassifierConfig field: " + key);
    }
    c.validate();
    return c;
}

nlohmann::json ClassifierConfig::to_json() const {
    return nlohmann::json{{"kind", classifier_to_string(kind)},
                          {"mlp_layers", mlp_layers},
                          {"mlp_epochs", mlp_epochs},
                          {"mlp_lr", mlp_lr},
                          {"n_trees", n_trees},
                          {"max_depth", max_depth},
                          {"min_leaf", min_leaf},
                          {"C", C},
                          {"max_iter", max_iter},
                          {"tol", tol}};
}

namespace {

double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    double e = std::exp(z);
    return e / (1.0 + e);
}

// log(1 + exp(-t)) without overflow.
double log1p_exp_neg(double t) {
    return std::log1p(std::exp(-std::abs(t))) + std::max(-t, 0.0);
}

void check_training_inputs(const Matrix& X, const std::vector<int>& y) {
    if (X.rows() < 2) throw PreconditionError("fit: need at least 2 rows");
    if (static_cast<std::size_t>(X.rows()) != y.size())
        throw ShapeError("fit: row/label count mismatch");
    int pos = 0, neg = 0;
    for (int v : y) {
        if (v == 1) ++pos;
        else if (v == 0) ++neg;
        else throw RangeError("fit: labels must be 0 or 1");
    }
    if (pos == 0 || neg == 0)
        throw DegenerateError("fit: both classes must be present");
}

AttackModel fit_mlp(const Matrix& X, const std::vector<int>& y,
                    const ClassifierConfig& cfg, std::uint64_t seed) {
    AttackModel m;
    m.cfg = cfg;
    m.in_dim = static_cast<int>(X.cols());
    Rng rng(sub_seed(seed, 0x111bULL));
    std::vector<int> widths;
    widths.push_back(m.in_dim);
    for (int w : cfg.mlp_layers) widths.push_back(w);
    widths.push_back(1);
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        double limit = std::sqrt(6.0 / (widths[l] + widths[l + 1]));
        Matrix w(widths[l], widths[l + 1]);
        for (Eigen::Index r = 0; r < w.rows(); ++r)
            for (Eigen::Index c = 0; c < w.cols(); ++c)
                w(r, c) = rng.uniform(-limit, limit);
        m.W.push_back(std::move(w));
        m.b.push_back(Vector::Zero(widths[l + 1]));
    }

    Eigen::Index rows = X.rows();
    Vector target(rows);
    for (Eigen::Index i = 0; i < rows; ++i)
        target(i) = y[static_cast<std::size_t>(i)];

    std::vector<Matrix> mW, vW;
    std::vector<Vector> mb, vb;
    for (const Matrix& w : m.W) {
        mW.push_back(Matrix::Zero(w.rows(), w.cols()));
        vW.push_back(Matrix::Zero(w.rows(), w.cols()));
    }
    for (const Vector& bv : m.b) {
        mb.push_back(Vector::Zero(bv.size()));
        vb.push_back(Vector::Zero(bv.size()));
    }
    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    std::size_t layers = m.W.size();

    for (int e = 1; e <= cfg.mlp_epochs; ++e) {
        std::vector<Matrix> H(layers + 1), pre(layers);
        H[0] = X;
        for (std::size_t l = 0; l < layers; ++l) {
            pre[l] = (H[l] * m.W[l]).rowwise() + m.b[l].transpose();
            H[l + 1] = l + 1 < layers ? pre[l].cwiseMax(0.0) : pre[l];
        }
        Vector s(rows);
        for (Eigen::Index i = 0; i < rows; ++i) s(i) = sigmoid(H[layers](i, 0));
        Matrix delta = (s - target) / static_cast<double>(rows);

        double bc1 = 1.0 - std::pow(beta1, e), bc2 = 1.0 - std::pow(beta2, e);
        for (std::size_t l = layers; l-- > 0;) {
            Matrix gW = H[l].transpose() * delta;
            Vector gb = delta.colwise().sum();
            if (l > 0) {
                delta = (delta * m.W[l].transpose())
                            .cwiseProduct(pre[l - 1].unaryExpr(
                                [](double v) { return v > 0.0 ? 1.0 : 0.0; }));
            }
            mW[l] = beta1 * mW[l] + (1.0 - beta1) * gW;
            vW[l] = beta2 * vW[l] + (1.0 - beta2) * gW.cwiseProduct(gW);
            m.W[l] -= cfg.mlp_lr * (mW[l] / bc1).cwiseQuotient(
                ((vW[l] / bc2).cwiseSqrt().array() + eps).matrix());
            mb[l] = beta1 * mb[l] + (1.0 - beta1) * gb;
            vb[l] = beta2 * vb[l] + (1.0 - beta2) * gb.cwiseProduct(gb);
            m.b[l] -= cfg.mlp_lr * (mb[l] / bc1).cwiseQuotient(
                ((vb[l] / bc2).cwiseSqrt().array() + eps).matrix());
        }
    }
    return m;
}

struct TreeBuilder {
    const Matrix& X;
    const std::vector<int>& y;
    const ClassifierConfig& cfg;
    Rng& rng;
    int mtry;
    std::vector<RfNode> nodes;

    double gini(int pos, int total) const {
        if (total == 0) return 0.0;
        double p = static_cast<double>(pos) / total;
        return 2.0 * p * (1.0 - p);
    }

    int build(std::vector<int>& rows, int depth) {
        int id = static_cast<int>(nodes.size());
        nodes.emplace_back();
        int pos = 0;
        for (int r : rows) pos += y[static_cast<std::size_t>(r)];
        int total = static_cast<int>(rows.size());
        nodes[static_cast<std::size_t>(id)].value =
            static_cast<double>(pos) / total;
        if (depth >= cfg.max_depth || pos == 0 || pos == total ||
            total < 2 * cfg.min_leaf)
            return id;

        double parent = gini(pos, total);
        std::vector<int> feats =
            rng.sample_indices(static_cast<int>(X.cols()), mtry);
        double best_gain = 1e-12;
        int best_feat = -1;
        double best_thr = 0.0;
        std::vector<std::pair<double, int>> order(rows.size());
        for (int f : feats) {  // ascending: ties resolve to the lowest index
            for (std::size_t i = 0; i < rows.size(); ++i)
                order[i] = {X(rows[i], f), y[static_cast<std::size_t>(rows[i])]};
            std::sort(order.begin(), order.end());
            int left_pos = 0, left_n = 0;
            for (std::size_t i = 0; i + 1 < order.size(); ++i) {
                left_pos += order[i].second;
                ++left_n;
                if (order[i].first == order[i + 1].first) continue;
                int right_n = total - left_n;
                if (left_n < cfg.min_leaf || right_n < cfg.min_leaf) continue;
                double w = (left_n * gini(left_pos, left_n) +
                            right_n * gini(pos - left_pos, right_n)) /
                           total;
                double gain = parent - w;
                if (gain > best_gain) {
                    best_gain = gain;
                    best_feat = f;
                    best_thr = (order[i].first + order[i + 1].first) / 2.0;
                }
            }
        }
        if (best_feat < 0) return id;

        std::vector<int> left, right;
        for (int r : rows)
            (X(r, best_feat) <= best_thr ? left : right).push_back(r);
        nodes[static_cast<std::size_t>(id)].feature = best_feat;
        nodes[static_cast<std::size_t>(id)].threshold = best_thr;
        int l = build(left, depth + 1);
        nodes[static_cast<std::size_t>(id)].left = l;
        int rgt = build(right, depth + 1);
        nodes[static_cast<std::size_t>(id)].right = rgt;
        return id;
    }
};

AttackModel fit_rf(const Matrix& X, const std::vector<int>& y,
                   const ClassifierConfig& cfg, std::uint64_t seed) {
    AttackModel m;
    m.cfg = cfg;
    m.in_dim = static_cast<int>(X.cols());
    int mtry = std::max(
        1, static_cast<int>(std::llround(std::sqrt(static_cast<double>(X.cols())))));
    for (int t = 0; t < cfg.n_trees; ++t) {
        Rng rng(sub_seed(seed, 0xf000ULL + static_cast<std::uint64_t>(t)));
        std::vector<int> rows(static_cast<std::size_t>(X.rows()));
        for (int& r : rows) r = rng.uniform_index(static_cast<std::size_t>(X.rows()));
        TreeBuilder builder{X, y, cfg, rng, mtry, {}};
        builder.build(rows, 0);
        m.trees.push_back(std::move(builder.nodes));
    }
    return m;
}

AttackModel fit_lr(const Matrix& X, const std::vector<int>& y,
                   const ClassifierConfig& cfg) {
    AttackModel m;
    m.cfg = cfg;
    m.in_dim = static_cast<int>(X.cols());
    Eigen::Index rows = X.rows(), d = X.cols();
    Vector sign(rows);
    for (Eigen::Index i = 0; i < rows; ++i)
        sign(i) = y[static_cast<std::size_t>(i)] == 1 ? 1.0 : -1.0;

    Vector w = Vector::Zero(d);
    double b = 0.0;
    auto objective = [&](const Vector& wv, double bv) {
        double loss = 0.5 * wv.squaredNorm();
        Vector z = X * wv;
        for (Eigen::Index i = 0; i < rows; ++i)
            loss += cfg.C * log1p_exp_neg(sign(i) * (z(i) + bv));
        return loss;
    };
    for (int it = 0; it < cfg.max_iter; ++it) {
        Vector z = X * w;
        Vector gw = w;
        double gb = 0.0;
        for (Eigen::Index i = 0; i < rows; ++i) {
            double margin = sign(i) * (z(i) + b);
            double s = sigmoid(-margin);  // d loss / d margin = -s
            gw -= cfg.C * s * sign(i) * X.row(i).transpose();
            gb -= cfg.C * s * sign(i);
        }
        double gnorm_inf = std::max(gw.cwiseAbs().maxCoeff(), std::abs(gb));
        if (gnorm_inf < cfg.tol) break;
        double g2 = gw.squaredNorm() + gb * gb;
        double f0 = objective(w, b);
        double step = 1.0;
        for (int halving = 0; halving < 60; ++halving) {
            Vector wn = w - step * gw;
            double bn = b - step * gb;
            if (objective(wn, bn) <= f0 - 1e-4 * step * g2) {
                w = std::move(wn);
                b = bn;
                break;
            }
            step /= 2.0;
        }
    }
    m.coef = std::move(w);
    m.intercept = b;
    return m;
}

double rf_tree_score(const std::vector<RfNode>& nodes, const Vector& x) {
    int id = 0;
    while (nodes[static_cast<std::size_t>(id)].feature >= 0) {
        const RfNode& nd = nodes[static_cast<std::size_t>(id)];
        id = x(nd.feature) <= nd.threshold ? nd.left : nd.right;
    }
    return nodes[static_cast<std::size_t>(id)].value;
}

}  // namespace

AttackModel fit(const Matrix& X, const std::vector<int>& y,
                const ClassifierConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    check_training_inputs(X, y);
    switch (cfg.kind) {
        case ClassifierKind::mlp: return fit_mlp(X, y, cfg, seed);
        case ClassifierKind::rf: return fit_rf(X, y, cfg, seed);
        case ClassifierKind::lr: return fit_lr(X, y, cfg);
    }
    throw RangeError("bad classifier enum");
}

std::pair<std::vector<int>, Vector> predict(const AttackModel& m,
                                            const Matrix& X) {
    if (X.rows() == 0) return {{}, Vector(0)};
    if (static_cast<int>(X.cols()) != m.in_dim)
        throw ShapeError("predict: input width " + std::to_string(X.cols()) +
                         " does not match model dimension " +
                         std::to_string(m.in_dim));
    Eigen::Index rows = X.rows();
    Vector scores(rows);
    switch (m.cfg.kind) {
        case ClassifierKind::mlp: {
            Matrix h = X;
            for (std::size_t l = 0; l < m.W.size(); ++l) {
                h = (h * m.W[l]).rowwise() + m.b[l].transpose();
                if (l + 1 < m.W.size()) h = h.cwiseMax(0.0);
            }
            for (Eigen::Index i = 0; i < rows; ++i) scores(i) = sigmoid(h(i, 0));
            break;
        }
        case ClassifierKind::rf: {
            for (Eigen::Index i = 0; i < rows; ++i) {
                double acc = 0.0;
                for (const auto& tree : m.trees)
                    acc += rf_tree_score(tree, X.row(i).transpose());
                scores(i) = acc / static_cast<double>(m.trees.size());
            }
            break;
        }
        case ClassifierKind::lr: {
            Vector z = X * m.coef;
            for (Eigen::Index i = 0; i < rows; ++i)
                scores(i) = sigmoid(z(i) + m.intercept);
            break;
        }
    }
    std::vector<int> labels(static_cast<std::size_t>(rows));
    for (Eigen::Index i = 0; i < rows; ++i)
        labels[static_cast<std::size_t>(i)] = scores(i) >= 0.5 ? 1 : 0;
    return {std::move(labels), std::move(scores)};
}

double attack_accuracy(const std::vector<int>& pred,
                       const std::vector<int>& truth) {
    if (pred.size() != truth.size())
        throw ShapeError("attack_accuracy: length mismatch");
    if (pred.empty()) throw PreconditionError("attack_accuracy: empty inputs");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < pred.size(); ++i)
        if (pred[i] == truth[i]) ++correct;
    return static_cast<double>(correct) / static_cast<double>(pred.size());
}

namespace {

nlohmann::json matrix_json(const Matrix& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

Matrix matrix_unjson(const nlohmann::json& j) {
    Matrix m(static_cast<Eigen::Index>(j.size()),
             j.empty() ? 0 : static_cast<Eigen::Index>(j[0].size()));
    for (std::size_t r = 0; r < j.size(); ++r)
        for (std::size_t c = 0; c < j[r].size(); ++c)
            m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
                j[r][c].get<double>();
    return m;
}

nlohmann::json vector_json(const Vector& v) {
    nlohmann::json out = nlohmann::json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
    return out;
}

Vector vector_unjson(const nlohmann::json& j) {
    Vector v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i)
        v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
    return v;
}

}  // namespace

nlohmann::json AttackModel::to_json() const {
    nlohmann::json j;
    j["format_version"] = 1;
    j["config"] = cfg.to_json();
    j["in_dim"] = in_dim;
    switch (cfg.kind) {
        case ClassifierKind::mlp: {
            nlohmann::json ws = nlohmann::json::array(), bs = nlohmann::json::array();
            for (const Matrix& w : W) ws.push_back(matrix_json(w));
            for (const Vector& v : b) bs.push_back(vector_json(v));
            j["W"] = std::move(ws);
            j["b"] = std::move(bs);
            break;
        }
        case ClassifierKind::rf: {
            nlohmann::json ts = nlohmann::json::array();
            for (const auto& tree : trees) {
                nlohmann::json nodes = nlohmann::json::array();
                for (const RfNode& n : tree)
                    nodes.push_back({{"feature", n.feature},
                                     {"threshold", n.threshold},
                                     {"left", n.left},
                                     {"right", n.right},
                                     {"value", n.value}});
                ts.push_back(std::move(nodes));
            }
            j["trees"] = std::move(ts);
            break;
        }
        case ClassifierKind::lr: {
            j["coef"] = vector_json(coef);
            j["intercept"] = intercept;
            break;
        }
    }
    return j;
}

AttackModel AttackModel::from_json(const nlohmann::json& j) {
    if (j.at("format_version").get<int>() != 1)
        throw ParseError("unsupported classifier format version");
    AttackModel m;
    m.cfg = ClassifierConfig::from_json(j.at("config"));
    m.in_dim = j.at("in_dim").get<int>();
    switch (m.cfg.kind) {
        case ClassifierKind::mlp: {
            for (const auto& w : j.at("W")) m.W.push_back(matrix_unjson(w));
            for (const auto& v : j.at("b")) m.b.push_back(vector_unjson(v));
            break;
        }
        case ClassifierKind::rf: {
            for (const auto& tj : j.at("trees")) {
                std::vector<RfNode> tree;
                for (const auto& nj : tj) {
                    RfNode n;
                    n.feature = nj.at("feature").get<int>();
                    n.threshold = nj.at("threshold").get<double>();
                    n.left = nj.at("left").get<int>();
                    n.right = nj.at("right").get<int>();
                    n.value = nj.at("value").get<double>();
                    tree.push_back(n);
                }
                m.trees.push_back(std::move(tree));
            }
            break;
        }
        case ClassifierKind::lr: {
            m.coef = vector_unjson(j.at("coef"));
            m.intercept = j.at("intercept").get<double>();
            break;
        }
    }
    return m;
}

void save_classifier(const AttackModel& m, const std::string& path) {
    write_text_file(path, m.to_json().dump(2) + "\n");
}

AttackModel load_classifier(const std::string& path) {
    return AttackModel::from_json(nlohmann::json::parse(read_text_file(path)));
}

}  // namespace gpia
