#include "gpia/gnn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

#include <nlohmann/json.hpp>

#include "gpia/errors.hpp"
#include "gpia/io.hpp"
#include "gpia/rng.hpp"

namespace gpia {

namespace {

constexpr std::uint64_t kSageInferStream = 0x5a6e0000ULL;
constexpr std::uint64_t kSageEpochStream = 0x5a6e1000ULL;
constexpr double kLeakySlope = 0.2;

double relu_grad(double pre) { return pre > 0.0 ? 1.0 : 0.0; }

}  // namespace

Arch arch_from_string(const std::string& s) {
    if (s == "gcn") return Arch::gcn;
    if (s == "sage" || s == "graphsage") return Arch::sage;
    if (s == "gat") return Arch::gat;
    throw ParseError("unknown architecture: " + s);
}

std::string arch_to_string(Arch a) {
    switch (a) {
        case Arch::gcn: return "gcn";
        case Arch::sage: return "sage";
        case Arch::gat: return "gat";
    }
    throw RangeError("bad arch enum");
}

void GnnConfig::validate() const {
    if (hidden_layers < 1 || hidden_layers > 8)
        throw ConfigError("hidden_layers must lie in [1,8]");
    if (hidden_dim <= 0) throw ConfigError("hidden_dim must be > 0");
    if (classes < 2) throw ConfigError("classes must be >= 2");
    if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
    if (patience < 1) throw ConfigError("patience must be >= 1");
    if (lr <= 0.0) throw ConfigError("lr must be > 0");
    if (arch == Arch::sage && sage_neighbors < 1)
        throw ConfigError("sage_neighbors must be >= 1");
    if (arch == Arch::gat) {
        if (gat_heads < 1) throw ConfigError("gat_heads must be >= 1");
        if (hidden_dim % gat_heads != 0)
            throw ConfigError("hidden_dim must be divisible by gat_heads");
    }
}

GnnConfig GnnConfig::from_json(const nlohmann::json& j) {
    GnnConfig c;
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string& key = it.key();
        if (key == "arch") c.arch = arch_from_string(it->get<std::string>());
        else if (key == "hidden_layers") c.hidden_layers = it->get<int>();
        else if (key == "hidden_dim") c.hidden_dim = it->get<int>();
        else if (key == "classes") c.classes = it->get<int>();
        else if (key == "sage_neighbors") c.sage_neighbors = it->get<int>();
        else if (key == "gat_heads") c.gat_heads = it->get<int>();
        else if (key == "lr") c.lr = it->get<double>();
        else if (key == "max_epochs") c.max_epochs = it->get<int>();
        else if (key == "patience") c.patience = it->get<int>();
        else if (key == "seed") c.seed = it->get<std::uint64_t>();
        else throw ParseError("unknown GnnConfig field: " + key);
    }
    c.validate();
    return c;
}

nlohmann::json GnnConfig::to_json() const {
    return nlohmann::json{{"arch", arch_to_string(arch)},
                          {"hidden_layers", hidden_layers},
                          {"hidden_dim", hidden_dim},
                          {"classes", classes},
                          {"sage_neighbors", sage_neighbors},
                          {"gat_heads", gat_heads},
                          {"lr", lr},
                          {"max_epochs", max_epochs},
                          {"patience", patience},
                          {"seed", seed}};
}

Matrix normalize_adjacency(const Graph& g) {
    g.validate();
    Matrix abar = Matrix::Identity(g.n, g.n);
    for (auto [u, v] : g.edges) {
        abar(u, v) = 1.0;
        abar(v, u) = 1.0;
    }
    Vector dinv(g.n);
    for (int i = 0; i < g.n; ++i) dinv(i) = 1.0 / std::sqrt(abar.row(i).sum());
    for (int i = 0; i < g.n; ++i)
        for (int j = 0; j < g.n; ++j) abar(i, j) *= dinv(i) * dinv(j);
    return abar;
}

namespace {

// Layer input/output widths. Index 0..L where L = hidden_layers; layer L is
// the readout to `classes`.
int layer_in(const GnnConfig& cfg, int in_dim, int layer) {
    return layer == 0 ? in_dim : cfg.hidden_dim;
}

int layer_out(const GnnConfig& cfg, int layer) {
    return layer == cfg.hidden_layers ? cfg.classes : cfg.hidden_dim;
}

int head_width(const GnnConfig& cfg, int layer) {
    return layer == cfg.hidden_layers ? cfg.classes
                                      : cfg.hidden_dim / cfg.gat_heads;
}

Matrix softmax_rows(const Matrix& logits) {
    Matrix p = logits;
    for (int i = 0; i < p.rows(); ++i) {
        double mx = p.row(i).maxCoeff();
        p.row(i) = (p.row(i).array() - mx).exp();
        p.row(i) /= p.row(i).sum();
    }
    return p;
}

// With-replacement fill below sage_neighbors, distinct above; deg-0 rows stay
// zero so isolated nodes aggregate nothing.
Matrix sage_aggregation_matrix(const std::vector<std::vector<int>>& adj, int n,
                               int k, Rng& rng) {
    Matrix m = Matrix::Zero(n, n);
    std::vector<int> scratch;
    for (int i = 0; i < n; ++i) {
        const std::vector<int>& nb = adj[static_cast<std::size_t>(i)];
        if (nb.empty()) continue;
        if (static_cast<int>(nb.size()) <= k) {
            if (static_cast<int>(nb.size()) == k) {
                for (int v : nb) m(i, v) += 1.0 / k;
            } else {
                for (int t = 0; t < k; ++t)
                    m(i, nb[rng.uniform_index(nb.size())]) += 1.0 / k;
            }
        } else {
            scratch = nb;
            for (int t = 0; t < k; ++t) {
                int j = rng.uniform_int(t, static_cast<int>(scratch.size()) - 1);
                std::swap(scratch[static_cast<std::size_t>(t)],
                          scratch[static_cast<std::size_t>(j)]);
                m(i, scratch[static_cast<std::size_t>(t)]) += 1.0 / k;
            }
        }
    }
    return m;
}

struct GatLayerCache {
    std::vector<Matrix> U;                             // per head, n x width
    std::vector<Vector> s, t;                          // per head
    std::vector<std::vector<std::vector<double>>> alpha;  // [head][node][nbr]
    std::vector<std::vector<std::vector<double>>> e;      // pre-LeakyReLU scores
};

struct ForwardCache {
    std::vector<Matrix> Z;    // Z[0] = X, Z[1..L] hidden activations
    std::vector<Matrix> pre;  // pre-activation of hidden layers
    Matrix logits, P;
    Matrix Ahat;               // gcn
    std::vector<Matrix> M;     // sage per-layer aggregation
    std::vector<std::vector<int>> nbr;  // gat closed neighborhoods
    std::vector<GatLayerCache> gat;
};

struct GradSet {
    std::vector<Matrix> dW;
    std::vector<std::vector<Vector>> da_src, da_dst;
};

GradSet zero_grads(const GnnModel& m) {
    GradSet g;
    g.dW.reserve(m.W.size());
    for (const Matrix& w : m.W) g.dW.push_back(Matrix::Zero(w.rows(), w.cols()));
    g.da_src.resize(m.a_src.size());
    g.da_dst.resize(m.a_dst.size());
    for (std::size_t l = 0; l < m.a_src.size(); ++l) {
        for (const Vector& a : m.a_src[l])
            g.da_src[l].push_back(Vector::Zero(a.size()));
        for (const Vector& a : m.a_dst[l])
            g.da_dst[l].push_back(Vector::Zero(a.size()));
    }
    return g;
}

ForwardCache forward_cache(const GnnModel& m, const Graph& g,
                           std::optional<std::uint64_t> sage_seed) {
    const GnnConfig& cfg = m.cfg;
    int L = cfg.hidden_layers;
    if (g.num_features() != m.in_dim)
        throw ConfigError("feature dim " + std::to_string(g.num_features()) +
                          " does not match model input dim " +
                          std::to_string(m.in_dim));
    for (int lbl : g.labels)
        if (lbl < 0 || lbl >= cfg.classes)
            throw ConfigError("label out of range for configured class count");

    ForwardCache c;
    c.Z.resize(static_cast<std::size_t>(L) + 1);
    c.pre.resize(static_cast<std::size_t>(L));
    c.Z[0] = g.features;

    if (cfg.arch == Arch::gcn) {
        c.Ahat = normalize_adjacency(g);
        for (int l = 0; l < L; ++l) {
            c.pre[static_cast<std::size_t>(l)] =
                c.Ahat * c.Z[static_cast<std::size_t>(l)] * m.W[static_cast<std::size_t>(l)];
            c.Z[static_cast<std::size_t>(l) + 1] =
                c.pre[static_cast<std::size_t>(l)].cwiseMax(0.0);
        }
        c.logits = c.Ahat * c.Z[static_cast<std::size_t>(L)] * m.W[static_cast<std::size_t>(L)];
    } else if (cfg.arch == Arch::sage) {
        std::uint64_t base =
            sage_seed ? *sage_seed : sub_seed(cfg.seed, kSageInferStream);
        auto adj = g.adjacency();
        c.M.resize(static_cast<std::size_t>(L) + 1);
        for (int l = 0; l <= L; ++l) {
            Rng rng(sub_seed(base, static_cast<std::uint64_t>(l)));
            c.M[static_cast<std::size_t>(l)] =
                sage_aggregation_matrix(adj, g.n, cfg.sage_neighbors, rng);
        }
        for (int l = 0; l <= L; ++l) {
            const Matrix& Z = c.Z[static_cast<std::size_t>(l)];
            Matrix H(g.n, 2 * Z.cols());
            H.leftCols(Z.cols()) = Z;
            H.rightCols(Z.cols()) = c.M[static_cast<std::size_t>(l)] * Z;
            Matrix out = H * m.W[static_cast<std::size_t>(l)];
            if (l < L) {
                c.pre[static_cast<std::size_t>(l)] = out;
                c.Z[static_cast<std::size_t>(l) + 1] = out.cwiseMax(0.0);
            } else {
                c.logits = out;
            }
        }
    } else {  // gat
        c.nbr.resize(static_cast<std::size_t>(g.n));
        for (int i = 0; i < g.n; ++i) c.nbr[static_cast<std::size_t>(i)].push_back(i);
        for (auto [u, v] : g.edges) {
            c.nbr[static_cast<std::size_t>(u)].push_back(v);
            c.nbr[static_cast<std::size_t>(v)].push_back(u);
        }
        for (auto& lst : c.nbr) std::sort(lst.begin(), lst.end());

        c.gat.resize(static_cast<std::size_t>(L) + 1);
        for (int l = 0; l <= L; ++l) {
            const Matrix& Z = c.Z[static_cast<std::size_t>(l)];
            int w = head_width(cfg, l);
            GatLayerCache& lc = c.gat[static_cast<std::size_t>(l)];
            Matrix agg_sum;  // output layer: head average
            Matrix concat;   // hidden layers: head concatenation
            if (l < L) concat.resize(g.n, cfg.hidden_dim);
            else agg_sum = Matrix::Zero(g.n, cfg.classes);
            for (int h = 0; h < cfg.gat_heads; ++h) {
                Matrix U = Z * m.W[static_cast<std::size_t>(l)].middleCols(
                                   static_cast<Eigen::Index>(h) * w, w);
                Vector s = U * m.a_src[static_cast<std::size_t>(l)][static_cast<std::size_t>(h)];
                Vector t = U * m.a_dst[static_cast<std::size_t>(l)][static_cast<std::size_t>(h)];
                std::vector<std::vector<double>> alpha(static_cast<std::size_t>(g.n));
                std::vector<std::vector<double>> evals(static_cast<std::size_t>(g.n));
                Matrix att = Matrix::Zero(g.n, w);
                for (int i = 0; i < g.n; ++i) {
                    const auto& nb = c.nbr[static_cast<std::size_t>(i)];
                    std::vector<double>& al = alpha[static_cast<std::size_t>(i)];
                    std::vector<double>& ev = evals[static_cast<std::size_t>(i)];
                    al.resize(nb.size());
                    ev.resize(nb.size());
                    double mx = -std::numeric_limits<double>::infinity();
                    for (std::size_t k = 0; k < nb.size(); ++k) {
                        double raw = s(i) + t(nb[k]);
                        ev[k] = raw;
                        double lrelu = raw > 0.0 ? raw : kLeakySlope * raw;
                        al[k] = lrelu;
                        mx = std::max(mx, lrelu);
                    }
                    double sum = 0.0;
                    for (double& a : al) {
                        a = std::exp(a - mx);
                        sum += a;
                    }
                    for (std::size_t k = 0; k < nb.size(); ++k) {
                        al[k] /= sum;
                        att.row(i) += al[k] * U.row(nb[k]);
                    }
                }
                lc.U.push_back(std::move(U));
                lc.s.push_back(std::move(s));
                lc.t.push_back(std::move(t));
                lc.alpha.push_back(std::move(alpha));
                lc.e.push_back(std::move(evals));
                if (l < L) concat.middleCols(static_cast<Eigen::Index>(h) * w, w) = att;
                else agg_sum += att;
            }
            if (l < L) {
                c.pre[static_cast<std::size_t>(l)] = concat;
                c.Z[static_cast<std::size_t>(l) + 1] = concat.cwiseMax(0.0);
            } else {
                c.logits = agg_sum / cfg.gat_heads;
            }
        }
    }
    c.P = softmax_rows(c.logits);
    return c;
}

void check_mask(const Graph& g, const std::vector<int>& mask, const char* what) {
    if (mask.empty()) throw PreconditionError(std::string(what) + " mask is empty");
    for (int v : mask)
        if (v < 0 || v >= g.n)
            throw RangeError(std::string(what) + " mask node out of range");
}

double loss_from_cache(const ForwardCache& c, const Graph& g,
                       const std::vector<int>& mask) {
    double total = 0.0;
    for (int v : mask) {
        double p = std::max(c.P(v, g.labels[static_cast<std::size_t>(v)]), 1e-300);
        total -= std::log(p);
    }
    return total / static_cast<double>(mask.size());
}

double acc_from_cache(const ForwardCache& c, const Graph& g,
                      const std::vector<int>& mask) {
    int correct = 0;
    for (int v : mask) {
        Eigen::Index arg;
        c.P.row(v).maxCoeff(&arg);
        if (static_cast<int>(arg) == g.labels[static_cast<std::size_t>(v)]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(mask.size());
}

// dL/dlogits of the masked mean cross-entropy through the softmax.
Matrix logit_grad(const ForwardCache& c, const Graph& g,
                  const std::vector<int>& mask) {
    Matrix d = Matrix::Zero(c.P.rows(), c.P.cols());
    double inv = 1.0 / static_cast<double>(mask.size());
    for (int v : mask) {
        d.row(v) = c.P.row(v) * inv;
        d(v, g.labels[static_cast<std::size_t>(v)]) -= inv;
    }
    return d;
}

// Backward through one GAT layer given the gradient on each head's attention
// output; accumulates into dZ and the parameter grads.
void gat_layer_backward(const GnnModel& m, const ForwardCache& c, int layer,
                        const std::vector<Matrix>& datt, Matrix& dZ,
                        GradSet& grads) {
    const GnnConfig& cfg = m.cfg;
    int w = head_width(cfg, layer);
    const GatLayerCache& lc = c.gat[static_cast<std::size_t>(layer)];
    const Matrix& Z = c.Z[static_cast<std::size_t>(layer)];
    int n = static_cast<int>(Z.rows());
    for (int h = 0; h < cfg.gat_heads; ++h) {
        const Matrix& U = lc.U[static_cast<std::size_t>(h)];
        const Vector& asrc = m.a_src[static_cast<std::size_t>(layer)][static_cast<std::size_t>(h)];
        const Vector& adst = m.a_dst[static_cast<std::size_t>(layer)][static_cast<std::size_t>(h)];
        const auto& alpha = lc.alpha[static_cast<std::size_t>(h)];
        const auto& evals = lc.e[static_cast<std::size_t>(h)];
        const Matrix& da = datt[static_cast<std::size_t>(h)];

        Matrix dU = Matrix::Zero(n, w);
        Vector ds = Vector::Zero(n), dt = Vector::Zero(n);
        for (int i = 0; i < n; ++i) {
            const auto& nb = c.nbr[static_cast<std::size_t>(i)];
            const auto& al = alpha[static_cast<std::size_t>(i)];
            const auto& ev = evals[static_cast<std::size_t>(i)];
            double dot = 0.0;
            std::vector<double> dalpha(nb.size());
            for (std::size_t k = 0; k < nb.size(); ++k) {
                dalpha[k] = da.row(i).dot(U.row(nb[k]));
                dU.row(nb[k]) += al[k] * da.row(i);
                dot += al[k] * dalpha[k];
            }
            for (std::size_t k = 0; k < nb.size(); ++k) {
                double dc = al[k] * (dalpha[k] - dot);
                double de = dc * (ev[k] > 0.0 ? 1.0 : kLeakySlope);
                ds(i) += de;
                dt(nb[k]) += de;
            }
        }
        grads.da_src[static_cast<std::size_t>(layer)][static_cast<std::size_t>(h)] +=
            U.transpose() * ds;
        grads.da_dst[static_cast<std::size_t>(layer)][static_cast<std::size_t>(h)] +=
            U.transpose() * dt;
        dU += ds * asrc.transpose();
        dU += dt * adst.transpose();
        grads.dW[static_cast<std::size_t>(layer)].middleCols(
            static_cast<Eigen::Index>(h) * w, w) += Z.transpose() * dU;
        dZ += dU * m.W[static_cast<std::size_t>(layer)]
                       .middleCols(static_cast<Eigen::Index>(h) * w, w)
                       .transpose();
    }
}

GradSet backward(const GnnModel& m, const Graph& g, const ForwardCache& c,
                 const std::vector<int>& mask) {
    const GnnConfig& cfg = m.cfg;
    int L = cfg.hidden_layers;
    GradSet grads = zero_grads(m);
    Matrix dlogits = logit_grad(c, g, mask);

    if (cfg.arch == Arch::gcn) {
        Matrix propagated = c.Ahat * dlogits;  // Ahat is symmetric
        grads.dW[static_cast<std::size_t>(L)] =
            (c.Ahat * c.Z[static_cast<std::size_t>(L)]).transpose() * dlogits;
        Matrix dZ = propagated * m.W[static_cast<std::size_t>(L)].transpose();
        for (int l = L - 1; l >= 0; --l) {
            Matrix dpre = dZ.cwiseProduct(c.pre[static_cast<std::size_t>(l)].unaryExpr(
                [](double x) { return relu_grad(x); }));
            grads.dW[static_cast<std::size_t>(l)] =
                (c.Ahat * c.Z[static_cast<std::size_t>(l)]).transpose() * dpre;
            if (l > 0)
                dZ = c.Ahat * dpre * m.W[static_cast<std::size_t>(l)].transpose();
        }
    } else if (cfg.arch == Arch::sage) {
        Matrix dout = dlogits;
        for (int l = L; l >= 0; --l) {
            const Matrix& Z = c.Z[static_cast<std::size_t>(l)];
            const Matrix& M = c.M[static_cast<std::size_t>(l)];
            Matrix H(Z.rows(), 2 * Z.cols());
            H.leftCols(Z.cols()) = Z;
            H.rightCols(Z.cols()) = M * Z;
            Matrix dpre = dout;
            if (l < L)
                dpre = dout.cwiseProduct(c.pre[static_cast<std::size_t>(l)].unaryExpr(
                    [](double x) { return relu_grad(x); }));
            grads.dW[static_cast<std::size_t>(l)] = H.transpose() * dpre;
            if (l > 0) {
                Matrix dH = dpre * m.W[static_cast<std::size_t>(l)].transpose();
                dout = dH.leftCols(Z.cols()) +
                       M.transpose() * dH.rightCols(Z.cols());
            }
        }
    } else {  // gat
        // Output layer: logits are the head average.
        std::vector<Matrix> datt(static_cast<std::size_t>(cfg.gat_heads),
                                 dlogits / cfg.gat_heads);
        Matrix dZ = Matrix::Zero(c.Z[static_cast<std::size_t>(L)].rows(),
                                 c.Z[static_cast<std::size_t>(L)].cols());
        gat_layer_backward(m, c, L, datt, dZ, grads);
        for (int l = L - 1; l >= 0; --l) {
            Matrix dpre = dZ.cwiseProduct(c.pre[static_cast<std::size_t>(l)].unaryExpr(
                [](double x) { return relu_grad(x); }));
            int w = head_width(cfg, l);
            std::vector<Matrix> dh(static_cast<std::size_t>(cfg.gat_heads));
            for (int h = 0; h < cfg.gat_heads; ++h)
                dh[static_cast<std::size_t>(h)] =
                    dpre.middleCols(static_cast<Eigen::Index>(h) * w, w);
            dZ = Matrix::Zero(c.Z[static_cast<std::size_t>(l)].rows(),
                              c.Z[static_cast<std::size_t>(l)].cols());
            gat_layer_backward(m, c, l, dh, dZ, grads);
        }
    }
    return grads;
}

Vector flatten(const std::vector<Matrix>& Ws,
               const std::vector<std::vector<Vector>>& asrc,
               const std::vector<std::vector<Vector>>& adst) {
    Eigen::Index total = 0;
    for (const Matrix& w : Ws) total += w.size();
    for (const auto& layer : asrc)
        for (const Vector& a : layer) total += a.size();
    for (const auto& layer : adst)
        for (const Vector& a : layer) total += a.size();
    Vector out(total);
    Eigen::Index pos = 0;
    for (std::size_t l = 0; l < Ws.size(); ++l) {
        const Matrix& w = Ws[l];
        for (Eigen::Index r = 0; r < w.rows(); ++r)
            for (Eigen::Index cidx = 0; cidx < w.cols(); ++cidx)
                out(pos++) = w(r, cidx);
        if (l < asrc.size()) {
            for (std::size_t h = 0; h < asrc[l].size(); ++h) {
                for (Eigen::Index i = 0; i < asrc[l][h].size(); ++i)
                    out(pos++) = asrc[l][h](i);
                for (Eigen::Index i = 0; i < adst[l][h].size(); ++i)
                    out(pos++) = adst[l][h](i);
            }
        }
    }
    return out;
}

void unflatten(const Vector& flat, std::vector<Matrix>& Ws,
               std::vector<std::vector<Vector>>& asrc,
               std::vector<std::vector<Vector>>& adst) {
    Eigen::Index pos = 0;
    for (std::size_t l = 0; l < Ws.size(); ++l) {
        Matrix& w = Ws[l];
        for (Eigen::Index r = 0; r < w.rows(); ++r)
            for (Eigen::Index cidx = 0; cidx < w.cols(); ++cidx)
                w(r, cidx) = flat(pos++);
        if (l < asrc.size()) {
            for (std::size_t h = 0; h < asrc[l].size(); ++h) {
                for (Eigen::Index i = 0; i < asrc[l][h].size(); ++i)
                    asrc[l][h](i) = flat(pos++);
                for (Eigen::Index i = 0; i < adst[l][h].size(); ++i)
                    adst[l][h](i) = flat(pos++);
            }
        }
    }
}

}  // namespace

GnnModel init_model(const Graph& g, const GnnConfig& cfg) {
    cfg.validate();
    GnnModel m;
    m.cfg = cfg;
    m.in_dim = g.num_features();
    int L = cfg.hidden_layers;
    Rng rng(cfg.seed);
    auto glorot = [&](Eigen::Index rows, Eigen::Index cols, double fan_in,
                      double fan_out) {
        double limit = std::sqrt(6.0 / (fan_in + fan_out));
        Matrix w(rows, cols);
        for (Eigen::Index r = 0; r < rows; ++r)
            for (Eigen::Index c = 0; c < cols; ++c)
                w(r, c) = rng.uniform(-limit, limit);
        return w;
    };

    for (int l = 0; l <= L; ++l) {
        int din = layer_in(cfg, m.in_dim, l);
        int dout = layer_out(cfg, l);
        if (cfg.arch == Arch::sage) {
            m.W.push_back(glorot(2 * din, dout, 2.0 * din, dout));
        } else if (cfg.arch == Arch::gat) {
            int w = head_width(cfg, l);
            m.W.push_back(glorot(din, static_cast<Eigen::Index>(cfg.gat_heads) * w,
                                 din, w));
            std::vector<Vector> srcs, dsts;
            for (int h = 0; h < cfg.gat_heads; ++h) {
                double limit = std::sqrt(6.0 / (w + 1.0));
                Vector a(w), b(w);
                for (int i = 0; i < w; ++i) a(i) = rng.uniform(-limit, limit);
                for (int i = 0; i < w; ++i) b(i) = rng.uniform(-limit, limit);
                srcs.push_back(std::move(a));
                dsts.push_back(std::move(b));
            }
            m.a_src.push_back(std::move(srcs));
            m.a_dst.push_back(std::move(dsts));
        } else {
            m.W.push_back(glorot(din, dout, din, dout));
        }
    }
    return m;
}

EmbeddingSet forward(const GnnModel& m, const Graph& g,
                     std::optional<std::uint64_t> sage_seed) {
    ForwardCache c = forward_cache(m, g, sage_seed);
    EmbeddingSet e;
    e.Z.assign(c.Z.begin() + 1, c.Z.end());
    e.O = std::move(c.P);
    return e;
}

double masked_loss(const GnnModel& m, const Graph& g,
                   const std::vector<int>& mask,
                   std::optional<std::uint64_t> sage_seed) {
    check_mask(g, mask, "loss");
    ForwardCache c = forward_cache(m, g, sage_seed);
    return loss_from_cache(c, g, mask);
}

double masked_accuracy(const GnnModel& m, const Graph& g,
                       const std::vector<int>& mask,
                       std::optional<std::uint64_t> sage_seed) {
    check_mask(g, mask, "accuracy");
    ForwardCache c = forward_cache(m, g, sage_seed);
    return acc_from_cache(c, g, mask);
}

Vector gradient_vector(const GnnModel& m, const Graph& g,
                       const std::vector<int>& mask,
                       std::optional<std::uint64_t> sage_seed) {
    check_mask(g, mask, "gradient");
    ForwardCache c = forward_cache(m, g, sage_seed);
    GradSet grads = backward(m, g, c, mask);
    return flatten(grads.dW, grads.da_src, grads.da_dst);
}

std::pair<std::vector<int>, std::vector<int>> make_masks(int n, double train_frac,
                                                         std::uint64_t seed) {
    if (n < 2) throw PreconditionError("make_masks: need at least 2 nodes");
    std::vector<int> ids(static_cast<std::size_t>(n));
    std::iota(ids.begin(), ids.end(), 0);
    Rng rng(sub_seed(seed, 0x3a5c5ULL));
    rng.shuffle(ids);
    int cut = std::clamp(static_cast<int>(std::llround(train_frac * n)), 1, n - 1);
    std::vector<int> train(ids.begin(), ids.begin() + cut);
    std::vector<int> test(ids.begin() + cut, ids.end());
    std::sort(train.begin(), train.end());
    std::sort(test.begin(), test.end());
    return {train, test};
}

std::pair<GnnModel, TrainReport> train_with_perturbation(
    const Graph& g, const GnnConfig& cfg, const std::vector<int>& train_mask,
    const std::vector<int>& test_mask, const GradientPerturb* perturb) {
    cfg.validate();
    check_mask(g, train_mask, "train");
    check_mask(g, test_mask, "test");
    {
        std::set<int> tr(train_mask.begin(), train_mask.end());
        for (int v : test_mask)
            if (tr.count(v))
                throw PreconditionError("train/test masks must be disjoint");
    }

    GnnModel model = init_model(g, cfg);
    Vector theta = flatten(model.W, model.a_src, model.a_dst);
    Vector adam_m = Vector::Zero(theta.size());
    Vector adam_v = Vector::Zero(theta.size());
    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    TrainReport report;
    double best_loss = std::numeric_limits<double>::infinity();
    Vector best_theta = theta;
    int best_epoch = 0;

    bool is_sage = cfg.arch == Arch::sage;
    // Non-SAGE forward is deterministic, so the post-update evaluation pass
    // doubles as the next epoch's gradient pass.
    std::optional<ForwardCache> eval_cache;
    if (!is_sage) eval_cache = forward_cache(model, g, std::nullopt);

    int epoch = 0;
    for (epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        GradSet grads;
        if (is_sage) {
            std::uint64_t es = sub_seed(cfg.seed, kSageEpochStream +
                                                      static_cast<std::uint64_t>(epoch));
            ForwardCache c = forward_cache(model, g, es);
            grads = backward(model, g, c, train_mask);
        } else {
            grads = backward(model, g, *eval_cache, train_mask);
        }
        Vector flat_g = flatten(grads.dW, grads.da_src, grads.da_dst);
        if (perturb) {
            if (perturb->clip > 0.0) {
                double norm = flat_g.norm();
                if (norm > perturb->clip) flat_g *= perturb->clip / norm;
            }
            if (perturb->noise_b > 0.0) {
                Rng nrng(sub_seed(perturb->seed,
                                  0xd9ULL + static_cast<std::uint64_t>(epoch)));
                for (Eigen::Index i = 0; i < flat_g.size(); ++i)
                    flat_g(i) += nrng.laplace(perturb->noise_b);
            }
        }
        double bc1 = 1.0 - std::pow(beta1, epoch);
        double bc2 = 1.0 - std::pow(beta2, epoch);
        for (Eigen::Index i = 0; i < theta.size(); ++i) {
            adam_m(i) = beta1 * adam_m(i) + (1.0 - beta1) * flat_g(i);
            adam_v(i) = beta2 * adam_v(i) + (1.0 - beta2) * flat_g(i) * flat_g(i);
            theta(i) -= cfg.lr * (adam_m(i) / bc1) /
                        (std::sqrt(adam_v(i) / bc2) + eps);
        }
        unflatten(theta, model.W, model.a_src, model.a_dst);

        ForwardCache c = forward_cache(model, g, std::nullopt);
        double trl = loss_from_cache(c, g, train_mask);
        double tel = loss_from_cache(c, g, test_mask);
        if (!std::isfinite(trl) || !std::isfinite(tel))
            throw DivergenceError("training diverged (NaN/Inf loss) at epoch " +
                                  std::to_string(epoch));
        report.train_loss.push_back(trl);
        report.test_loss.push_back(tel);
        report.train_acc.push_back(acc_from_cache(c, g, train_mask));
        report.test_acc.push_back(acc_from_cache(c, g, test_mask));
        if (!is_sage) eval_cache = std::move(c);

        if (tel < best_loss) {
            best_loss = tel;
            best_theta = theta;
            best_epoch = epoch;
        }
        if (epoch - best_epoch >= cfg.patience) {
            report.stop_reason = "patience";
            break;
        }
    }
    if (report.stop_reason.empty()) report.stop_reason = "max_epochs";

    unflatten(best_theta, model.W, model.a_src, model.a_dst);
    model.trained_epochs = best_epoch;
    report.best_epoch = best_epoch;
    return {std::move(model), std::move(report)};
}

std::pair<GnnModel, TrainReport> train(const Graph& g, const GnnConfig& cfg,
                                       const std::vector<int>& train_mask,
                                       const std::vector<int>& test_mask) {
    return train_with_perturbation(g, cfg, train_mask, test_mask, nullptr);
}

namespace {

nlohmann::json matrix_to_json(const Matrix& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

Matrix matrix_from_json(const nlohmann::json& j) {
    if (!j.is_array() || j.empty())
        throw ParseError("matrix JSON must be a non-empty array of rows");
    Matrix m(static_cast<Eigen::Index>(j.size()),
             static_cast<Eigen::Index>(j[0].size()));
    for (std::size_t r = 0; r < j.size(); ++r) {
        if (j[r].size() != j[0].size())
            throw ParseError("ragged matrix JSON");
        for (std::size_t c = 0; c < j[r].size(); ++c)
            m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
                j[r][c].get<double>();
    }
    return m;
}

}  // namespace

nlohmann::json GnnModel::to_json() const {
    nlohmann::json j;
    j["format_version"] = 1;
    j["config"] = cfg.to_json();
    j["in_dim"] = in_dim;
    j["trained_epochs"] = trained_epochs;
    nlohmann::json ws = nlohmann::json::array();
    for (const Matrix& w : W) ws.push_back(matrix_to_json(w));
    j["W"] = std::move(ws);
    if (cfg.arch == Arch::gat) {
        nlohmann::json src = nlohmann::json::array(), dst = nlohmann::json::array();
        for (const auto& layer : a_src) {
            nlohmann::json lj = nlohmann::json::array();
            for (const Vector& a : layer) {
                nlohmann::json v = nlohmann::json::array();
                for (Eigen::Index i = 0; i < a.size(); ++i) v.push_back(a(i));
                lj.push_back(std::move(v));
            }
            src.push_back(std::move(lj));
        }
        for (const auto& layer : a_dst) {
            nlohmann::json lj = nlohmann::json::array();
            for (const Vector& a : layer) {
                nlohmann::json v = nlohmann::json::array();
                for (Eigen::Index i = 0; i < a.size(); ++i) v.push_back(a(i));
                lj.push_back(std::move(v));
            }
            dst.push_back(std::move(lj));
        }
        j["a_src"] = std::move(src);
        j["a_dst"] = std::move(dst);
    }
    return j;
}

GnnModel GnnModel::from_json(const nlohmann::json& j) {
    if (j.at("format_version").get<int>() != 1)
        throw ParseError("unsupported model format version");
    GnnModel m;
    m.cfg = GnnConfig::from_json(j.at("config"));
    m.in_dim = j.at("in_dim").get<int>();
    m.trained_epochs = j.at("trained_epochs").get<int>();
    for (const auto& w : j.at("W")) m.W.push_back(matrix_from_json(w));
    if (m.cfg.arch == Arch::gat) {
        for (const auto& layer : j.at("a_src")) {
            std::vector<Vector> vs;
            for (const auto& aj : layer) {
                Vector a(static_cast<Eigen::Index>(aj.size()));
                for (std::size_t i = 0; i < aj.size(); ++i)
                    a(static_cast<Eigen::Index>(i)) = aj[i].get<double>();
                vs.push_back(std::move(a));
            }
            m.a_src.push_back(std::move(vs));
        }
        for (const auto& layer : j.at("a_dst")) {
            std::vector<Vector> vs;
            for (const auto& aj : layer) {
                Vector a(static_cast<Eigen::Index>(aj.size()));
                for (std::size_t i = 0; i < aj.size(); ++i)
                    a(static_cast<Eigen::Index>(i)) = aj[i].get<double>();
                vs.push_back(std::move(a));
            }
            m.a_dst.push_back(std::move(vs));
        }
    }
    return m;
}

void save_model(const GnnModel& m, const std::string& path) {
    write_text_file(path, m.to_json().dump(2) + "\n");
}

GnnModel load_model(const std::string& path) {
    return GnnModel::from_json(nlohmann::json::parse(read_text_file(path)));
}

}  // namespace gpia
