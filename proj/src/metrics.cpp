#include "crfgan/metrics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "crfgan/netspec.hpp"

namespace crfgan {

namespace {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

void check_comparable(const FeatureSet& a, const FeatureSet& b) {
    if (a.feature_dim != b.feature_dim)
        throw ParameterError("metrics: feature dimension mismatch");
    if (a.fingerprint != b.fingerprint)
        throw IntegrityError("metrics: extractor fingerprint mismatch (" + a.fingerprint +
                             " vs " + b.fingerprint + ")");
}

Mat as_matrix(const FeatureSet& s) {
    return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                          Eigen::RowMajor>>(s.rows.data(), s.count(),
                                                            s.feature_dim);
}

// Symmetric PSD square root; negative eigenvalues clamp to zero.
Mat sqrtm_psd(const Mat& m) {
    Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (m + m.transpose()));
    Vec ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

FeatureSet extract_features(const std::vector<Volume3D>& volumes, std::uint64_t seed,
                            int feature_dim) {
    if (volumes.empty()) throw ParameterError("extract_features: empty volume set");
    const auto shape = volumes.front().shape;
    for (const auto& v : volumes)
        if (v.shape != shape) throw ParameterError("extract_features: non-uniform shapes");
    if (shape[0] != shape[1] || shape[1] != shape[2])
        throw ParameterError("extract_features: cubic volumes expected");

    NetGraph g = build_feature_extractor(shape[0], feature_dim);
    Rng rng(seed);
    ParamStore params = init_params(g, rng);

    FeatureSet out;
    out.feature_dim = feature_dim;
    std::ostringstream fp;
    fp << "seed=" << seed << ";graph=" << std::hex << fingerprint(g);
    out.fingerprint = fp.str();
    out.rows.reserve(volumes.size() * feature_dim);
    for (const auto& v : volumes) {
        Tape t;
        Var x = ops::constant(t, volume_to_tensor(v));
        Var f = forward(t, g, load_params(t, params), x);
        const Tensor& fv = t.val(f);
        out.rows.insert(out.rows.end(), fv.v.begin(), fv.v.end());
    }
    return out;
}

double fid(const FeatureSet& a, const FeatureSet& b) {
    check_comparable(a, b);
    if (a.count() < 2 || b.count() < 2)
        throw ParameterError("fid: need at least 2 samples per set for covariance");
    const Mat ma = as_matrix(a), mb = as_matrix(b);
    const Vec mu_a = ma.colwise().mean(), mu_b = mb.colwise().mean();
    const Mat ca = (ma.rowwise() - mu_a.transpose()).transpose() *
                   (ma.rowwise() - mu_a.transpose()) / (a.count() - 1.0);
    const Mat cb = (mb.rowwise() - mu_b.transpose()).transpose() *
                   (mb.rowwise() - mu_b.transpose()) / (b.count() - 1.0);

    // Tr((Sa Sb)^1/2) computed as Tr((Sa^1/2 Sb Sa^1/2)^1/2), which is
    // symmetric PSD by construction.
    const Mat sqrt_a = sqrtm_psd(ca);
    const Mat cross = sqrtm_psd(sqrt_a * cb * sqrt_a);
    const double mean_term = (mu_a - mu_b).squaredNorm();
    const double trace_term = ca.trace() + cb.trace() - 2.0 * cross.trace();
    // the true distance is non-negative; rounding in the eigensolve can
    // push identical sets a few ulps below zero
    return std::max(0.0, mean_term + trace_term);
}

double mmd(const FeatureSet& a, const FeatureSet& b) {
    check_comparable(a, b);
    if (a.count() < 2 || b.count() < 2) throw ParameterError("mmd: need at least two rows per set");
    const Mat ma = as_matrix(a), mb = as_matrix(b);
    const int m = a.count(), n = b.count();

    // Median heuristic over the pooled set.
    Mat pooled(m + n, a.feature_dim);
    pooled << ma, mb;
    std::vector<double> dists;
    dists.reserve(static_cast<std::size_t>(m + n) * (m + n - 1) / 2);
    for (int i = 0; i < m + n; ++i)
        for (int j = i + 1; j < m + n; ++j)
            dists.push_back((pooled.row(i) - pooled.row(j)).norm());
    double sigma = 1.0;
    if (!dists.empty()) {
        std::nth_element(dists.begin(), dists.begin() + dists.size() / 2, dists.end());
        sigma = dists[dists.size() / 2];
        if (sigma <= 0.0) sigma = 1.0;
    }
    const double denom = 2.0 * sigma * sigma;

    auto kmean = [&](const Mat& x, const Mat& y) {
        double s = 0.0;
        for (int i = 0; i < x.rows(); ++i)
            for (int j = 0; j < y.rows(); ++j)
                s += std::exp(-(x.row(i) - y.row(j)).squaredNorm() / denom);
        return s / (static_cast<double>(x.rows()) * y.rows());
    };
    return kmean(ma, ma) + kmean(mb, mb) - 2.0 * kmean(ma, mb);
}

}  // namespace crfgan
