#include "crfgan/crf.hpp"

#include <algorithm>
#include <cmath>

namespace crfgan {

namespace {

// The pairwise Potts field sums over every other patch; dividing by (n - 1)
// keeps its magnitude comparable to the unary term for any graph size, so w
// has the same meaning on a 4-patch toy graph and a 512-patch grid.
double pair_scale(int n) { return n > 1 ? 1.0 / (n - 1) : 0.0; }

double kernel_value(const PatchGraph& g, int i, int j, double theta) {
    double d2 = 0.0;
    for (int k = 0; k < g.embed_dim; ++k) {
        const double d = g.at(i, k) - g.at(j, k);
        d2 += d * d;
    }
    return std::exp(-d2 / (2.0 * theta * theta));
}

// Unary cost table u (n x 2) from the linear head.
std::vector<double> unary_costs(const CrfModel& m, const PatchGraph& g) {
    const Tensor& w = m.params.tensors[0].value;
    const Tensor& b = m.params.tensors[1].value;
    std::vector<double> u(static_cast<std::size_t>(g.n) * 2);
    for (int i = 0; i < g.n; ++i)
        for (int l = 0; l < 2; ++l) {
            double s = b[l];
            for (int k = 0; k < g.embed_dim; ++k) s += g.at(i, k) * w[2 * k + l];
            u[2 * i + l] = s;
        }
    return u;
}

}  // namespace

CrfModel CrfModel::init(int embed_dim, Rng& rng, double w, double theta, int mf_iters,
                        int n_max) {
    CrfModel m;
    m.embed_dim = embed_dim;
    m.mf_iters = mf_iters;
    m.n_max = n_max;
    Tensor uw({embed_dim, 2});
    for (double& x : uw.v) x = rng.normal(0.0, 0.02);
    m.params.tensors.push_back({"crf.unary_w", std::move(uw)});
    m.params.tensors.push_back({"crf.unary_b", Tensor({2})});
    m.params.tensors.push_back({"crf.w", Tensor::scalar(w)});
    m.params.tensors.push_back({"crf.theta", Tensor::scalar(theta)});
    m.validate();
    return m;
}

void CrfModel::validate() const {
    if (w() < 0.0) throw ParameterError("crf: pairwise weight must be nonnegative");
    if (theta() <= 0.0) throw ParameterError("crf: bandwidth must be positive");
    if (mf_iters < 1) throw ParameterError("crf: need at least one mean-field sweep");
}

void CrfModel::project() {
    Tensor& wv = params.tensors[2].value;
    Tensor& tv = params.tensors[3].value;
    wv[0] = std::max(0.0, wv[0]);
    tv[0] = std::max(1e-3, tv[0]);
}

PatchGraph build_patch_graph(const EmbeddingGrid& a, int n_max) {
    if (a.cells() < 2) throw ParameterError("patch graph: need at least 2 patches");
    for (double v : a.data)
        if (!std::isfinite(v)) throw NumericError("patch graph: non-finite embedding");

    // Smallest power-of-two pooling that brings the cell count under n_max.
    int pool = 1;
    auto cells_at = [&](int p) {
        return static_cast<std::int64_t>(a.shape[0] / p) * (a.shape[1] / p) * (a.shape[2] / p);
    };
    while (cells_at(pool) > n_max) {
        pool *= 2;
        if (a.shape[0] % pool || a.shape[1] % pool || a.shape[2] % pool)
            throw GeometryError("patch graph: embedding shape not divisible by pooling factor");
    }

    const int d = a.shape[0] / pool, h = a.shape[1] / pool, w = a.shape[2] / pool;
    PatchGraph g;
    g.n = d * h * w;
    g.embed_dim = a.channels;
    g.x.assign(static_cast<std::size_t>(g.n) * a.channels, 0.0);
    g.coords.resize(g.n);
    const double inv = 1.0 / (static_cast<double>(pool) * pool * pool);
    const std::int64_t plane = static_cast<std::int64_t>(a.shape[1]) * a.shape[2];
    for (int z = 0; z < d; ++z)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const int idx = (z * h + y) * w + x;
                g.coords[idx] = {z, y, x};
                for (int c = 0; c < a.channels; ++c) {
                    double s = 0.0;
                    for (int kz = 0; kz < pool; ++kz)
                        for (int ky = 0; ky < pool; ++ky)
                            for (int kx = 0; kx < pool; ++kx)
                                s += a.data[c * a.cells() +
                                            (static_cast<std::int64_t>(z * pool + kz)) * plane +
                                            (y * pool + ky) * a.shape[2] + (x * pool + kx)];
                    g.x[static_cast<std::int64_t>(idx) * a.channels + c] = s * inv;
                }
            }
    return g;
}

double energy(const CrfModel& m, const PatchGraph& g, const std::vector<int>& y) {
    if (static_cast<int>(y.size()) != g.n) throw ParameterError("energy: label size mismatch");
    for (int l : y)
        if (l != 0 && l != 1) throw ParameterError("energy: labels must be 0 or 1");
    const auto u = unary_costs(m, g);
    double e = 0.0;
    for (int i = 0; i < g.n; ++i) e += u[2 * i + y[i]];
    const double w = m.w(), theta = m.theta();
    const double ps = pair_scale(g.n);
    for (int i = 0; i < g.n; ++i)
        for (int j = i + 1; j < g.n; ++j)
            if (y[i] != y[j]) e += w * ps * kernel_value(g, i, j, theta);
    return e;
}

GibbsResult gibbs_exact(const CrfModel& m, const PatchGraph& g) {
    if (g.n > 14) throw CapacityError("gibbs_exact: enumeration is limited to 14 patches");
    const auto u = unary_costs(m, g);
    const double w = m.w(), theta = m.theta();
    const double ps = pair_scale(g.n);
    std::vector<double> k(static_cast<std::size_t>(g.n) * g.n, 0.0);
    for (int i = 0; i < g.n; ++i)
        for (int j = i + 1; j < g.n; ++j)
            k[i * g.n + j] = w * ps * kernel_value(g, i, j, theta);

    GibbsResult r;
    r.marginals.n = g.n;
    r.marginals.q.assign(static_cast<std::size_t>(g.n) * 2, 0.0);
    const std::uint32_t total = 1u << g.n;
    // Shift by the minimum energy before exponentiating; undone in Z below.
    std::vector<double> energies(total);
    double emin = 1e300;
    for (std::uint32_t mask = 0; mask < total; ++mask) {
        double e = 0.0;
        for (int i = 0; i < g.n; ++i) {
            const int yi = (mask >> i) & 1;
            e += u[2 * i + yi];
            for (int j = i + 1; j < g.n; ++j)
                if (yi != ((mask >> j) & 1)) e += k[i * g.n + j];
        }
        energies[mask] = e;
        emin = std::min(emin, e);
    }
    double z = 0.0;
    for (std::uint32_t mask = 0; mask < total; ++mask) {
        const double p = std::exp(-(energies[mask] - emin));
        z += p;
        for (int i = 0; i < g.n; ++i) r.marginals.q[2 * i + ((mask >> i) & 1)] += p;
    }
    for (double& q : r.marginals.q) q /= z;
    r.partition = z * std::exp(-emin);
    return r;
}

MarginalField meanfield_infer(const CrfModel& m, const PatchGraph& g) {
    m.validate();
    const auto u = unary_costs(m, g);
    const double w = m.w(), theta = m.theta();
    std::vector<double> k(static_cast<std::size_t>(g.n) * g.n, 0.0);
    for (int i = 0; i < g.n; ++i)
        for (int j = 0; j < g.n; ++j)
            if (i != j) k[static_cast<std::size_t>(i) * g.n + j] = kernel_value(g, i, j, theta);

    MarginalField q;
    q.n = g.n;
    q.q.assign(static_cast<std::size_t>(g.n) * 2, 0.5);
    for (int sweep = 0; sweep < m.mf_iters; ++sweep) {
        for (int i = 0; i < g.n; ++i) {
            double msg[2] = {0.0, 0.0};  // expected kernel mass per neighbor label
            for (int j = 0; j < g.n; ++j) {
                const double kij = k[static_cast<std::size_t>(i) * g.n + j];
                msg[0] += kij * q.q[2 * j];
                msg[1] += kij * q.q[2 * j + 1];
            }
            const double ps = pair_scale(g.n);
            const double e0 = -(u[2 * i] + w * ps * msg[1]);  // disagreement with label-1 mass
            const double e1 = -(u[2 * i + 1] + w * ps * msg[0]);
            const double mx = std::max(e0, e1);
            const double p0 = std::exp(e0 - mx), p1 = std::exp(e1 - mx);
            q.q[2 * i] = p0 / (p0 + p1);
            q.q[2 * i + 1] = p1 / (p0 + p1);
        }
    }
    return q;
}

double meanfield_free_energy(const CrfModel& m, const PatchGraph& g, const MarginalField& q) {
    const auto u = unary_costs(m, g);
    const double w = m.w(), theta = m.theta();
    double f = 0.0;
    for (int i = 0; i < g.n; ++i) {
        f += q.q[2 * i] * u[2 * i] + q.q[2 * i + 1] * u[2 * i + 1];
        for (int l = 0; l < 2; ++l) {
            const double p = q.q[2 * i + l];
            if (p > 0.0) f += p * std::log(p);
        }
    }
    const double ps = pair_scale(g.n);
    for (int i = 0; i < g.n; ++i)
        for (int j = i + 1; j < g.n; ++j) {
            const double kij = w * ps * kernel_value(g, i, j, theta);
            f += kij * (q.q[2 * i] * q.q[2 * j + 1] + q.q[2 * i + 1] * q.q[2 * j]);
        }
    return f;
}

CrfVars load_crf_params(Tape& t, const CrfModel& m) {
    CrfVars v;
    v.unary_w = ops::constant(t, m.params.tensors[0].value);
    v.unary_b = ops::constant(t, m.params.tensors[1].value);
    v.w = ops::constant(t, m.params.tensors[2].value);
    v.theta = ops::constant(t, m.params.tensors[3].value);
    return v;
}

Var crf_score_var(Tape& t, const CrfVars& vars, Var embedding, int n_max, int mf_iters) {
    if (!all_finite(t.val(embedding))) throw NumericError("crf_score: non-finite embedding");
    Var grid = embedding;
    auto cells = [&](Var g) {
        const auto& s = t.val(g).shape;
        return static_cast<std::int64_t>(s[1]) * s[2] * s[3];
    };
    while (cells(grid) > n_max) grid = ops::avgpool3(t, grid, 2);
    const int n = static_cast<int>(cells(grid));

    Var x = ops::grid_to_rows(t, grid);                      // (n, C)
    Var u = ops::add_rowvec(t, ops::matmul(t, x, vars.unary_w), vars.unary_b);  // (n, 2)
    Var k = ops::pairwise_gaussian(t, x, vars.theta);        // (n, n), zero diagonal

    Tensor q0({n, 2});
    std::fill(q0.v.begin(), q0.v.end(), 0.5);
    Var q = ops::constant(t, std::move(q0));
    for (int sweep = 0; sweep < mf_iters; ++sweep) {
        for (int i = 0; i < n; ++i) {
            Var krow = ops::slice(t, k, 0, i, 1);            // (1, n)
            Var msg = ops::matmul(t, krow, q);               // (1, 2)
            Var flipped = ops::concat(t, 1, {ops::slice(t, msg, 1, 1, 1),
                                             ops::slice(t, msg, 1, 0, 1)});
            Var pair = ops::scale(t, ops::scale_by(t, flipped, vars.w), pair_scale(n));
            Var logits = ops::neg(t, ops::add(t, ops::slice(t, u, 0, i, 1), pair));
            Var row = ops::softmax_rows(t, logits);
            q = ops::set_row(t, q, i, ops::reshape(t, row, {2}));
        }
    }
    Var label1 = ops::slice(t, q, 1, 1, 1);                  // (n, 1)
    return ops::clamp(t, ops::mean(t, label1), kScoreEps, 1.0 - kScoreEps);
}

double crf_score(const CrfModel& m, const EmbeddingGrid& a) {
    m.validate();
    Tape t;
    Var e = ops::constant(t, a.to_tensor());
    CrfVars vars = load_crf_params(t, m);
    Var s = crf_score_var(t, vars, e, m.n_max, m.mf_iters);
    return t.val(s).item();
}

}  // namespace crfgan
