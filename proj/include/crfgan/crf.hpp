#pragma once

#include <vector>

#include "crfgan/autograd.hpp"
#include "crfgan/netspec.hpp"
#include "crfgan/subvolume.hpp"

namespace crfgan {

struct CapacityError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Fully-connected graph over embedding patches. One row of `x` per patch.
struct PatchGraph {
    int n = 0;
    int embed_dim = 0;
    std::vector<double> x;                    // (n, embed_dim) row-major
    std::vector<std::array<int, 3>> coords;   // position on the (pooled) embedding grid

    double at(int i, int k) const { return x[static_cast<std::int64_t>(i) * embed_dim + k]; }
};

// Binary-label fully-connected pairwise CRF. Unary costs come from a linear
// head on the patch embedding; the pairwise term is a Potts penalty weighted
// by a Gaussian similarity kernel k(x_i,x_j) = exp(-|x_i-x_j|^2 / (2 theta^2)).
// Label 1 means "consistent/real".
struct CrfModel {
    int embed_dim = 0;
    ParamStore params;  // crf.unary_w (C,2), crf.unary_b (2), crf.w (1), crf.theta (1)
    int mf_iters = 5;
    int n_max = 512;

    static CrfModel init(int embed_dim, Rng& rng, double w = 0.1, double theta = 1.0,
                         int mf_iters = 5, int n_max = 512);

    double w() const { return params.tensors[2].value[0]; }
    double theta() const { return params.tensors[3].value[0]; }
    void validate() const;
    // Re-impose w >= 0 and theta > 0 after a gradient step.
    void project();
};

struct MarginalField {
    int n = 0;
    std::vector<double> q;  // (n, 2) row-major, rows sum to 1
    double q1(int i) const { return q[2 * i + 1]; }
};

// Flatten (and average-pool when the grid exceeds n_max patches) an
// embedding grid into a patch graph.
PatchGraph build_patch_graph(const EmbeddingGrid& a, int n_max);

// Eq.-2-style energy: sum of unary costs plus Potts-weighted kernel terms.
double energy(const CrfModel& m, const PatchGraph& g, const std::vector<int>& y);

struct GibbsResult {
    double partition = 0.0;
    MarginalField marginals;
};

// Exact enumeration over all 2^n labelings; n <= 14.
GibbsResult gibbs_exact(const CrfModel& m, const PatchGraph& g);

// Sequential coordinate mean-field updates, ascending patch order,
// `mf_iters` full sweeps. Deterministic.
MarginalField meanfield_infer(const CrfModel& m, const PatchGraph& g);

// F(Q) = E_Q[E] - H(Q); each sequential sweep is exact coordinate descent on
// this, so it never increases across sweeps.
double meanfield_free_energy(const CrfModel& m, const PatchGraph& g, const MarginalField& q);

struct CrfVars {
    Var unary_w, unary_b, w, theta;
};

CrfVars load_crf_params(Tape& t, const CrfModel& m);

// Differentiable score: unrolled mean-field over the (pooled) embedding,
// then the mean marginal of label 1, clamped to (eps, 1-eps).
Var crf_score_var(Tape& t, const CrfVars& vars, Var embedding, int n_max, int mf_iters);

// Forward-only convenience over the same computation.
double crf_score(const CrfModel& m, const EmbeddingGrid& a);

}  // namespace crfgan
