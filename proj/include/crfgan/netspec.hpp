#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "crfgan/autograd.hpp"
#include "crfgan/rng.hpp"
#include "crfgan/subvolume.hpp"
#include "crfgan/tensor.hpp"

namespace crfgan {

// Scores from D and the CRF head stay inside (eps, 1-eps) so Eq-style log
// terms are always finite.
inline constexpr double kScoreEps = 1e-6;

enum class LayerKind {
    Linear,
    Reshape,
    Conv3d,
    Upsample,
    InstanceNorm,
    PixelNorm,
    LeakyRelu,
    Tanh,
    Sigmoid,
    GlobalAvgPool,
    AvgPool,
};

struct LayerSpec {
    LayerKind kind;
    int c_in = 0, c_out = 0;                       // conv / norm channels
    std::array<int, 3> kernel{1, 1, 1};
    std::array<int, 3> stride{1, 1, 1};
    std::array<int, 3> pad{0, 0, 0};
    int factor = 1;                                // upsample / avgpool
    double slope = 0.2;                            // leaky relu
    std::vector<int> out_shape;                    // reshape target
    int in_features = 0, out_features = 0;         // linear
};

struct NetGraph {
    std::string name;
    std::vector<int> input_shape;  // without batch; latent nets use {latent_dim}
    std::vector<LayerSpec> layers;
};

// Closed-form learnable-parameter counts.
std::int64_t param_count(const LayerSpec& l);
std::int64_t count_params(const NetGraph& g);

std::vector<int> layer_output_shape(const LayerSpec& l, const std::vector<int>& in);
std::vector<int> output_shape(const NetGraph& g, std::vector<int> in);
// Per-layer output shapes for a given input (activation accounting).
std::vector<std::vector<int>> activation_shapes(const NetGraph& g, std::vector<int> in);

// FNV-1a over the serialized layer stack; checkpoints carry this so a file
// cannot silently bind to a different architecture.
std::uint64_t fingerprint(const NetGraph& g);

struct NamedTensor {
    std::string name;
    Tensor value;
};

struct ParamStore {
    std::vector<NamedTensor> tensors;
    std::int64_t total_elements() const;
    Tensor* find(const std::string& name);
    const Tensor* find(const std::string& name) const;
};

// Gaussian(0, init_std) weights, zero biases, unit norm gains. Seeded.
ParamStore init_params(const NetGraph& g, Rng& rng, double init_std = 0.02);

std::vector<Var> load_params(Tape& t, const ParamStore& p);
Var forward(Tape& t, const NetGraph& g, const std::vector<Var>& params, Var input);

// Depth receptive-field radius of a voxel-producing graph, in voxel units,
// derived from kernel extents and the cumulative up-scale at each conv.
int receptive_field_depth_voxels(const NetGraph& g, int input_cell_voxels);

struct ModelConfig {
    int resolution = 64;
    int scale = 4;          // voxels per embedding cell
    int sub_extent = 0;     // c; 0 means d/4
    int embed_channels = 64;
    int latent_dim = 128;
    int d_base_channels = 32;
    int d_max_channels = 256;

    GridGeometry geometry() const;
};

NetGraph build_g1(const ModelConfig& cfg);
NetGraph build_g2(const ModelConfig& cfg);
NetGraph build_encoder(const ModelConfig& cfg);
NetGraph build_discriminator(const ModelConfig& cfg);
// Extra low-res branch used only for parameter accounting: a generator head
// on the embedding grid plus a discriminator mirroring D at quarter scale.
std::vector<NetGraph> build_surrogate_lowres_branch(const ModelConfig& cfg);
// Fixed random feature encoder for FID/MMD.
NetGraph build_feature_extractor(int resolution, int feature_dim);

// The four trainable nets with their parameters.
struct GanModel {
    ModelConfig cfg;
    NetGraph g1, g2, enc, disc;
    ParamStore p_g1, p_g2, p_enc, p_disc;

    static GanModel init(const ModelConfig& cfg, Rng& rng);
    std::uint64_t combined_fingerprint() const;
};

// Convenience single-input forwards (fresh tape, no gradients kept).
EmbeddingGrid g1_forward(const GanModel& m, const std::vector<double>& z);
Volume3D g2_forward(const GanModel& m, const EmbeddingGrid& a_sub);
EmbeddingGrid encoder_forward(const GanModel& m, const Volume3D& slab);
double discriminator_forward(const GanModel& m, const Volume3D& slab);

// Tensor bridges (volume voxels are float32; model math is float64).
Tensor volume_to_tensor(const Volume3D& v);
Volume3D tensor_to_volume(const Tensor& t);

}  // namespace crfgan
