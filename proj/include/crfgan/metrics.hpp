#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "crfgan/volume.hpp"

namespace crfgan {

// Rows of features, one per volume, plus the fingerprint of the extractor
// that produced them. Sets are only comparable when fingerprints match.
struct FeatureSet {
    int feature_dim = 0;
    std::vector<double> rows;  // (count, feature_dim) row-major
    std::string fingerprint;

    int count() const {
        return feature_dim == 0 ? 0 : static_cast<int>(rows.size()) / feature_dim;
    }
};

// Features from a fixed, seeded, randomly initialized 3-D conv encoder with
// global average pooling. Deterministic per (seed, resolution, feature_dim).
FeatureSet extract_features(const std::vector<Volume3D>& volumes, std::uint64_t seed,
                            int feature_dim = 256);

// Frechet distance between Gaussian fits; covariance square root via
// symmetric eigen-decomposition with negative eigenvalues clamped to zero.
double fid(const FeatureSet& a, const FeatureSet& b);

// Biased squared-MMD with a Gaussian kernel; bandwidth is the median
// pairwise distance over the pooled set.
double mmd(const FeatureSet& a, const FeatureSet& b);

}  // namespace crfgan
