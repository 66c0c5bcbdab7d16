#include "crfgan/netspec.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace crfgan {

namespace {

void require(bool cond, const std::string& msg) {
    if (!cond) throw GeometryError("netspec: " + msg);
}

int ilog2(int x) {
    int n = 0;
    while ((1 << n) < x) ++n;
    require((1 << n) == x, "expected a power of two, got " + std::to_string(x));
    return n;
}

}  // namespace

std::int64_t param_count(const LayerSpec& l) {
    switch (l.kind) {
        case LayerKind::Linear:
            return static_cast<std::int64_t>(l.in_features) * l.out_features + l.out_features;
        case LayerKind::Conv3d:
            return static_cast<std::int64_t>(l.c_in) * l.c_out * l.kernel[0] * l.kernel[1] *
                       l.kernel[2] +
                   l.c_out;
        case LayerKind::InstanceNorm:
            return 2 * static_cast<std::int64_t>(l.c_in);
        default:
            return 0;
    }
}

std::int64_t count_params(const NetGraph& g) {
    std::int64_t n = 0;
    for (const auto& l : g.layers) n += param_count(l);
    return n;
}

std::vector<int> layer_output_shape(const LayerSpec& l, const std::vector<int>& in) {
    switch (l.kind) {
        case LayerKind::Linear:
            require(in.size() == 1 && in[0] == l.in_features, "linear input mismatch");
            return {l.out_features};
        case LayerKind::Reshape:
            require(Tensor::numel(l.out_shape) == Tensor::numel(in), "reshape numel mismatch");
            return l.out_shape;
        case LayerKind::Conv3d: {
            require(in.size() == 4 && in[0] == l.c_in, "conv input mismatch");
            std::vector<int> out{l.c_out, 0, 0, 0};
            for (int a = 0; a < 3; ++a) {
                const int e = (in[a + 1] + 2 * l.pad[a] - l.kernel[a]) / l.stride[a] + 1;
                require(e >= 1, "conv output is empty; input smaller than receptive field");
                out[a + 1] = e;
            }
            return out;
        }
        case LayerKind::Upsample:
            require(in.size() == 4, "upsample input rank");
            return {in[0], in[1] * l.factor, in[2] * l.factor, in[3] * l.factor};
        case LayerKind::AvgPool:
            require(in.size() == 4, "avgpool input rank");
            require(in[1] % l.factor == 0 && in[2] % l.factor == 0 && in[3] % l.factor == 0,
                    "avgpool divisibility");
            return {in[0], in[1] / l.factor, in[2] / l.factor, in[3] / l.factor};
        case LayerKind::GlobalAvgPool:
            require(in.size() == 4, "global pool input rank");
            return {in[0]};
        case LayerKind::InstanceNorm:
        case LayerKind::PixelNorm:
            require(in.size() == 4 && (l.c_in == 0 || in[0] == l.c_in), "norm input mismatch");
            return in;
        case LayerKind::LeakyRelu:
        case LayerKind::Tanh:
        case LayerKind::Sigmoid:
            return in;
    }
    throw GeometryError("netspec: unknown layer kind");
}

std::vector<int> output_shape(const NetGraph& g, std::vector<int> in) {
    for (const auto& l : g.layers) in = layer_output_shape(l, in);
    return in;
}

std::vector<std::vector<int>> activation_shapes(const NetGraph& g, std::vector<int> in) {
    std::vector<std::vector<int>> out;
    for (const auto& l : g.layers) {
        in = layer_output_shape(l, in);
        out.push_back(in);
    }
    return out;
}

std::uint64_t fingerprint(const NetGraph& g) {
    std::ostringstream os;
    os << g.name;
    for (int e : g.input_shape) os << ' ' << e;
    for (const auto& l : g.layers) {
        os << '|' << static_cast<int>(l.kind) << ' ' << l.c_in << ' ' << l.c_out << ' '
           << l.kernel[0] << l.kernel[1] << l.kernel[2] << ' ' << l.stride[0] << l.stride[1]
           << l.stride[2] << ' ' << l.pad[0] << l.pad[1] << l.pad[2] << ' ' << l.factor << ' '
           << l.slope << ' ' << l.in_features << ' ' << l.out_features;
        for (int e : l.out_shape) os << ' ' << e;
    }
    const std::string s = os.str();
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

std::int64_t ParamStore::total_elements() const {
    std::int64_t n = 0;
    for (const auto& t : tensors) n += t.value.size();
    return n;
}

Tensor* ParamStore::find(const std::string& name) {
    for (auto& t : tensors)
        if (t.name == name) return &t.value;
    return nullptr;
}

const Tensor* ParamStore::find(const std::string& name) const {
    for (const auto& t : tensors)
        if (t.name == name) return &t.value;
    return nullptr;
}

ParamStore init_params(const NetGraph& g, Rng& rng, double init_std) {
    ParamStore p;
    for (std::size_t i = 0; i < g.layers.size(); ++i) {
        const LayerSpec& l = g.layers[i];
        const std::string prefix = g.name + ".layer" + std::to_string(i);
        auto gaussian = [&](std::vector<int> shape) {
            Tensor t(std::move(shape));
            for (double& x : t.v) x = rng.normal(0.0, init_std);
            return t;
        };
        switch (l.kind) {
            case LayerKind::Linear:
                p.tensors.push_back({prefix + ".weight", gaussian({l.in_features, l.out_features})});
                p.tensors.push_back({prefix + ".bias", Tensor({l.out_features})});
                break;
            case LayerKind::Conv3d:
                p.tensors.push_back(
                    {prefix + ".weight",
                     gaussian({l.c_out, l.c_in, l.kernel[0], l.kernel[1], l.kernel[2]})});
                p.tensors.push_back({prefix + ".bias", Tensor({l.c_out})});
                break;
            case LayerKind::InstanceNorm: {
                Tensor gamma({l.c_in});
                std::fill(gamma.v.begin(), gamma.v.end(), 1.0);
                p.tensors.push_back({prefix + ".gamma", std::move(gamma)});
                p.tensors.push_back({prefix + ".beta", Tensor({l.c_in})});
                break;
            }
            default:
                break;
        }
    }
    return p;
}

std::vector<Var> load_params(Tape& t, const ParamStore& p) {
    std::vector<Var> vars;
    vars.reserve(p.tensors.size());
    for (const auto& nt : p.tensors) vars.push_back(ops::constant(t, nt.value));
    return vars;
}

Var forward(Tape& t, const NetGraph& g, const std::vector<Var>& params, Var input) {
    require(t.val(input).shape == g.input_shape ||
                (g.input_shape.size() == 4 && t.val(input).shape.size() == 4 &&
                 t.val(input).shape[0] == g.input_shape[0]),
            g.name + ": input shape contract violated");
    Var x = input;
    std::size_t pi = 0;
    for (const auto& l : g.layers) {
        switch (l.kind) {
            case LayerKind::Linear: {
                Var w = params[pi++], b = params[pi++];
                Var row = ops::reshape(t, x, {1, l.in_features});
                Var y = ops::matmul(t, row, w);
                y = ops::add_rowvec(t, y, b);
                x = ops::reshape(t, y, {l.out_features});
                break;
            }
            case LayerKind::Reshape:
                x = ops::reshape(t, x, l.out_shape);
                break;
            case LayerKind::Conv3d: {
                Var w = params[pi++], b = params[pi++];
                x = ops::conv3d(t, x, w, b, l.stride, l.pad);
                break;
            }
            case LayerKind::Upsample:
                x = ops::upsample_nearest3(t, x, l.factor);
                break;
            case LayerKind::AvgPool:
                x = ops::avgpool3(t, x, l.factor);
                break;
            case LayerKind::GlobalAvgPool:
                x = ops::global_avgpool(t, x);
                break;
            case LayerKind::InstanceNorm: {
                Var gamma = params[pi++], beta = params[pi++];
                x = ops::instance_norm(t, x, gamma, beta);
                break;
            }
            case LayerKind::PixelNorm:
                x = ops::pixel_norm(t, x);
                break;
            case LayerKind::LeakyRelu:
                x = ops::leaky_relu(t, x, l.slope);
                break;
            case LayerKind::Tanh:
                x = ops::tanh_(t, x);
                break;
            case LayerKind::Sigmoid:
                x = ops::sigmoid_(t, x);
                break;
        }
    }
    require(pi == params.size(), g.name + ": parameter list does not match graph");
    return x;
}

int receptive_field_depth_voxels(const NetGraph& g, int input_cell_voxels) {
    int cell = input_cell_voxels;
    int rho = 0;
    for (const auto& l : g.layers) {
        if (l.kind == LayerKind::Upsample) cell = std::max(1, cell / l.factor);
        if (l.kind == LayerKind::Conv3d) rho += (l.kernel[0] - 1) / 2 * cell * l.stride[0];
    }
    return rho;
}

GridGeometry ModelConfig::geometry() const {
    return make_geometry(resolution, scale, sub_extent);
}

NetGraph build_g1(const ModelConfig& cfg) {
    const GridGeometry geo = cfg.geometry();
    const int d = geo.embed_shape[0];
    require(d >= 4, "embedding grid must be at least 4 cells deep");
    const int n_up = ilog2(d / 4);
    const int c0 = 2 * cfg.embed_channels;

    NetGraph g;
    g.name = "G1";
    g.input_shape = {cfg.latent_dim};
    g.layers.push_back({.kind = LayerKind::Linear,
                        .in_features = cfg.latent_dim,
                        .out_features = c0 * 64});
    g.layers.push_back({.kind = LayerKind::Reshape, .out_shape = {c0, 4, 4, 4}});
    g.layers.push_back({.kind = LayerKind::LeakyRelu});
    int ch = c0;
    for (int i = 0; i < n_up; ++i) {
        const int next = std::max(cfg.embed_channels, ch / 2);
        g.layers.push_back({.kind = LayerKind::Upsample, .factor = 2});
        g.layers.push_back({.kind = LayerKind::Conv3d,
                            .c_in = ch,
                            .c_out = next,
                            .kernel = {3, 3, 3},
                            .pad = {1, 1, 1}});
        g.layers.push_back({.kind = LayerKind::InstanceNorm, .c_in = next});
        g.layers.push_back({.kind = LayerKind::LeakyRelu});
        ch = next;
    }
    g.layers.push_back({.kind = LayerKind::Conv3d,
                        .c_in = ch,
                        .c_out = cfg.embed_channels,
                        .kernel = {3, 3, 3},
                        .pad = {1, 1, 1}});
    return g;
}

NetGraph build_g2(const ModelConfig& cfg) {
    const int n_up = ilog2(cfg.scale);
    NetGraph g;
    g.name = "G2";
    const GridGeometry geo = cfg.geometry();
    g.input_shape = {cfg.embed_channels, geo.sub_extent, geo.embed_shape[1], geo.embed_shape[2]};
    int ch = cfg.embed_channels;
    // Fully convolutional with per-voxel normalization only, so the same
    // weights run on any depth extent and distant voxels stay uncoupled.
    for (int i = 0; i < n_up; ++i) {
        const int next = std::max(4, ch / 2);
        g.layers.push_back({.kind = LayerKind::Upsample, .factor = 2});
        g.layers.push_back({.kind = LayerKind::Conv3d,
                            .c_in = ch,
                            .c_out = next,
                            .kernel = {3, 3, 3},
                            .pad = {1, 1, 1}});
        g.layers.push_back({.kind = LayerKind::PixelNorm});
        g.layers.push_back({.kind = LayerKind::LeakyRelu});
        ch = next;
    }
    g.layers.push_back({.kind = LayerKind::Conv3d,
                        .c_in = ch,
                        .c_out = 1,
                        .kernel = {3, 3, 3},
                        .pad = {1, 1, 1}});
    g.layers.push_back({.kind = LayerKind::Tanh});
    return g;
}

NetGraph build_encoder(const ModelConfig& cfg) {
    const int n_down = ilog2(cfg.scale);
    const GridGeometry geo = cfg.geometry();
    NetGraph g;
    g.name = "E";
    g.input_shape = {1, geo.sub_extent * geo.scale, geo.full_shape[1], geo.full_shape[2]};
    int ch = std::max(4, cfg.embed_channels >> n_down);
    g.layers.push_back({.kind = LayerKind::Conv3d,
                        .c_in = 1,
                        .c_out = ch,
                        .kernel = {3, 3, 3},
                        .pad = {1, 1, 1}});
    g.layers.push_back({.kind = LayerKind::PixelNorm});
    g.layers.push_back({.kind = LayerKind::LeakyRelu});
    for (int i = 0; i < n_down; ++i) {
        const int next = i + 1 == n_down ? cfg.embed_channels : ch * 2;
        g.layers.push_back({.kind = LayerKind::Conv3d,
                            .c_in = ch,
                            .c_out = next,
                            .kernel = {3, 3, 3},
                            .stride = {2, 2, 2},
                            .pad = {1, 1, 1}});
        if (i + 1 < n_down) {
            g.layers.push_back({.kind = LayerKind::PixelNorm});
            g.layers.push_back({.kind = LayerKind::LeakyRelu});
        }
        ch = next;
    }
    return g;
}

NetGraph build_discriminator(const ModelConfig& cfg) {
    const GridGeometry geo = cfg.geometry();
    NetGraph g;
    g.name = "D";
    g.input_shape = {1, geo.sub_extent * geo.scale, geo.full_shape[1], geo.full_shape[2]};
    int depth = g.input_shape[1], h = g.input_shape[2], w = g.input_shape[3];
    int ch_in = 1;
    int ch = cfg.d_base_channels;
    while (std::min(h, w) > 4) {
        const int sd = depth > 4 ? 2 : 1;
        g.layers.push_back({.kind = LayerKind::Conv3d,
                            .c_in = ch_in,
                            .c_out = ch,
                            .kernel = {3, 3, 3},
                            .stride = {sd, 2, 2},
                            .pad = {1, 1, 1}});
        g.layers.push_back({.kind = LayerKind::LeakyRelu});
        depth = (depth + 2 - 3) / sd + 1;
        h = (h + 2 - 3) / 2 + 1;
        w = (w + 2 - 3) / 2 + 1;
        ch_in = ch;
        ch = std::min(2 * ch, cfg.d_max_channels);
    }
    g.layers.push_back({.kind = LayerKind::GlobalAvgPool});
    g.layers.push_back({.kind = LayerKind::Linear, .in_features = ch_in, .out_features = 1});
    g.layers.push_back({.kind = LayerKind::Sigmoid});
    return g;
}

std::vector<NetGraph> build_surrogate_lowres_branch(const ModelConfig& cfg) {
    const GridGeometry geo = cfg.geometry();
    NetGraph head;
    head.name = "G_low";
    head.input_shape = {cfg.embed_channels, geo.embed_shape[0], geo.embed_shape[1],
                        geo.embed_shape[2]};
    const int mid = std::max(4, cfg.embed_channels / 2);
    head.layers.push_back({.kind = LayerKind::Conv3d,
                           .c_in = cfg.embed_channels,
                           .c_out = mid,
                           .kernel = {3, 3, 3},
                           .pad = {1, 1, 1}});
    head.layers.push_back({.kind = LayerKind::PixelNorm});
    head.layers.push_back({.kind = LayerKind::LeakyRelu});
    head.layers.push_back(
        {.kind = LayerKind::Conv3d, .c_in = mid, .c_out = 1, .kernel = {3, 3, 3}, .pad = {1, 1, 1}});
    head.layers.push_back({.kind = LayerKind::Tanh});

    // The low-res discriminator mirrors D layer for layer; it just reads the
    // quarter-scale volume the head emits.
    NetGraph dlow = build_discriminator(cfg);
    dlow.name = "D_low";
    dlow.input_shape = {1, geo.embed_shape[0], geo.embed_shape[1], geo.embed_shape[2]};
    return {head, dlow};
}

NetGraph build_feature_extractor(int resolution, int feature_dim) {
    NetGraph g;
    g.name = "FeatureNet";
    g.input_shape = {1, resolution, resolution, resolution};
    int ch_in = 1, ch = 16, spatial = resolution;

    while (spatial > 4) {
        g.layers.push_back({.kind = LayerKind::Conv3d,
                            .c_in = ch_in,
                            .c_out = ch,
                            .kernel = {3, 3, 3},
                            .stride = {2, 2, 2},
                            .pad = {1, 1, 1}});
        g.layers.push_back({.kind = LayerKind::LeakyRelu});
        spatial = (spatial + 2 - 3) / 2 + 1;
        ch_in = ch;
        ch = std::min(2 * ch, 128);
    }
    g.layers.push_back({.kind = LayerKind::GlobalAvgPool});
    g.layers.push_back({.kind = LayerKind::Linear, .in_features = ch_in, .out_features = feature_dim});
    return g;
}

GanModel GanModel::init(const ModelConfig& cfg, Rng& rng) {
    GanModel m;
    m.cfg = cfg;
    m.g1 = build_g1(cfg);
    m.g2 = build_g2(cfg);
    m.enc = build_encoder(cfg);
    m.disc = build_discriminator(cfg);
    m.p_g1 = init_params(m.g1, rng);
    m.p_g2 = init_params(m.g2, rng);
    m.p_enc = init_params(m.enc, rng);
    m.p_disc = init_params(m.disc, rng);
    return m;
}

std::uint64_t GanModel::combined_fingerprint() const {
    std::uint64_t h = 1469598103934665603ull;
    for (std::uint64_t f : {fingerprint(g1), fingerprint(g2), fingerprint(enc), fingerprint(disc)}) {
        for (int i = 0; i < 8; ++i) {
            h ^= (f >> (8 * i)) & 0xff;
            h *= 1099511628211ull;
        }
    }
    return h;
}

EmbeddingGrid g1_forward(const GanModel& m, const std::vector<double>& z) {
    if (static_cast<int>(z.size()) != m.cfg.latent_dim)
        throw GeometryError("g1_forward: latent dimension mismatch");
    Tape t;
    Var zin = ops::constant(t, Tensor({m.cfg.latent_dim}, std::vector<double>(z)));
    Var out = forward(t, m.g1, load_params(t, m.p_g1), zin);
    return EmbeddingGrid::from_tensor(t.val(out));
}

Volume3D g2_forward(const GanModel& m, const EmbeddingGrid& a_sub) {
    Tape t;
    Var a = ops::constant(t, a_sub.to_tensor());
    Var out = forward(t, m.g2, load_params(t, m.p_g2), a);
    return tensor_to_volume(t.val(out));
}

EmbeddingGrid encoder_forward(const GanModel& m, const Volume3D& slab) {
    const GridGeometry geo = m.cfg.geometry();
    if (slab.shape[1] != geo.full_shape[1] || slab.shape[2] != geo.full_shape[2] ||
        slab.shape[0] % geo.scale != 0)
        throw GeometryError("encoder_forward: slab shape does not match geometry");
    Tape t;
    Var x = ops::constant(t, volume_to_tensor(slab));
    Var out = forward(t, m.enc, load_params(t, m.p_enc), x);
    return EmbeddingGrid::from_tensor(t.val(out));
}

double discriminator_forward(const GanModel& m, const Volume3D& slab) {
    const GridGeometry geo = m.cfg.geometry();
    if (slab.shape[1] != geo.full_shape[1] || slab.shape[2] != geo.full_shape[2])
        throw GeometryError("discriminator_forward: slab shape does not match geometry");
    Tape t;
    Var x = ops::constant(t, volume_to_tensor(slab));
    Var out = forward(t, m.disc, load_params(t, m.p_disc), x);
    const double s = t.val(out).item();
    return std::min(1.0 - kScoreEps, std::max(kScoreEps, s));
}

Tensor volume_to_tensor(const Volume3D& v) {
    Tensor t({1, v.shape[0], v.shape[1], v.shape[2]});
    for (std::int64_t i = 0; i < v.size(); ++i) t[i] = static_cast<double>(v.voxels[i]);
    return t;
}

Volume3D tensor_to_volume(const Tensor& t) {
    if (t.shape.size() != 4 || t.shape[0] != 1)
        throw GeometryError("tensor_to_volume: expected (1,D,H,W)");
    Volume3D v(t.shape[1], t.shape[2], t.shape[3]);
    for (std::int64_t i = 0; i < v.size(); ++i) v.voxels[i] = static_cast<float>(t[i]);
    return v;
}

}  // namespace crfgan
