#include "crfgan/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace crfgan {

namespace fs = std::filesystem;

void TrainConfig::validate() const {
    if (batch_size < 1) throw ParameterError("config: batch size must be >= 1");
    if (lr_g < 0 || lr_e < 0 || lr_d_crf < 0) throw ParameterError("config: negative learning rate");
    if (iterations < 0) throw ParameterError("config: negative iteration count");
    model.geometry();  // throws on inconsistent geometry
}

std::string TrainConfig::to_json() const {
    nlohmann::json j = {
        {"resolution", model.resolution},
        {"scale", model.scale},
        {"sub_extent", model.sub_extent},
        {"embed_channels", model.embed_channels},
        {"latent_dim", model.latent_dim},
        {"d_base_channels", model.d_base_channels},
        {"d_max_channels", model.d_max_channels},
        {"batch_size", batch_size},
        {"lr_g", lr_g},
        {"lr_e", lr_e},
        {"lr_d_crf", lr_d_crf},
        {"beta1", beta1},
        {"beta2", beta2},
        {"iterations", iterations},
        {"checkpoint_every", checkpoint_every},
        {"log_every", log_every},
        {"seed", seed},
        {"adv_weight", adv_weight},
        {"recon_weight", recon_weight},
        {"recon_updates_g2", recon_updates_g2},
        {"crf_w_init", crf_w_init},
        {"crf_theta_init", crf_theta_init},
        {"mf_iters", mf_iters},
        {"n_max_patches", n_max_patches},
    };
    return j.dump(2);
}

TrainConfig TrainConfig::from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("config: invalid JSON: ") + e.what());
    }
    TrainConfig c;
    auto get = [&](const char* key, auto& dst) {
        if (j.contains(key)) dst = j.at(key).get<std::decay_t<decltype(dst)>>();
    };
    get("resolution", c.model.resolution);
    get("scale", c.model.scale);
    get("sub_extent", c.model.sub_extent);
    get("embed_channels", c.model.embed_channels);
    get("latent_dim", c.model.latent_dim);
    get("d_base_channels", c.model.d_base_channels);
    get("d_max_channels", c.model.d_max_channels);
    get("batch_size", c.batch_size);
    get("lr_g", c.lr_g);
    get("lr_e", c.lr_e);
    get("lr_d_crf", c.lr_d_crf);
    get("beta1", c.beta1);
    get("beta2", c.beta2);
    get("iterations", c.iterations);
    get("checkpoint_every", c.checkpoint_every);
    get("log_every", c.log_every);
    get("seed", c.seed);
    get("adv_weight", c.adv_weight);
    get("recon_weight", c.recon_weight);
    get("recon_updates_g2", c.recon_updates_g2);
    get("crf_w_init", c.crf_w_init);
    get("crf_theta_init", c.crf_theta_init);
    get("mf_iters", c.mf_iters);
    get("n_max_patches", c.n_max_patches);
    c.validate();
    return c;
}

TrainConfig TrainConfig::from_json_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw FormatError("config: cannot open " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return from_json(ss.str());
}

void TrainConfig::to_json_file(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw FormatError("config: cannot write " + path);
    os << to_json() << "\n";
}

void Adam::init_like(const std::vector<Tensor*>& params) {
    m.clear();
    v.clear();
    for (const Tensor* p : params) {
        m.push_back(Tensor(p->shape));
        v.push_back(Tensor(p->shape));
    }
    steps = 0;
}

void Adam::step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads,
                std::size_t count) {
    ++steps;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(steps));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(steps));
    for (std::size_t k = 0; k < count; ++k) {
        Tensor& p = *params[k];
        const Tensor& g = grads[k];
        Tensor& mk = m[k];
        Tensor& vk = v[k];
        for (std::int64_t i = 0; i < p.size(); ++i) {
            mk[i] = beta1 * mk[i] + (1.0 - beta1) * g[i];
            vk[i] = beta2 * vk[i] + (1.0 - beta2) * g[i] * g[i];
            p[i] -= lr * (mk[i] / bc1) / (std::sqrt(vk[i] / bc2) + eps);
        }
    }
}

std::vector<Tensor*> TrainState::max_player_params() {
    std::vector<Tensor*> out;
    for (auto& t : model.p_disc.tensors) out.push_back(&t.value);
    for (auto& t : crf.params.tensors) out.push_back(&t.value);
    return out;
}

std::vector<Tensor*> TrainState::gen_params() {
    std::vector<Tensor*> out;
    for (auto& t : model.p_g1.tensors) out.push_back(&t.value);
    for (auto& t : model.p_g2.tensors) out.push_back(&t.value);
    return out;
}

std::vector<Tensor*> TrainState::recon_params() {
    std::vector<Tensor*> out;
    for (auto& t : model.p_enc.tensors) out.push_back(&t.value);
    for (auto& t : model.p_g2.tensors) out.push_back(&t.value);
    return out;
}

TrainState TrainState::init(const TrainConfig& cfg) {
    cfg.validate();
    TrainState s;
    s.cfg = cfg;
    s.rng = Rng(cfg.seed);
    s.model = GanModel::init(cfg.model, s.rng);
    s.crf = CrfModel::init(cfg.model.embed_channels, s.rng, cfg.crf_w_init, cfg.crf_theta_init,
                           cfg.mf_iters, cfg.n_max_patches);
    const GridGeometry geo = cfg.model.geometry();
    if (geo.embed_shape[0] % geo.sub_extent != 0)
        throw GeometryError("trainer: sub-extent must divide the embedding depth");
    s.opt_max = Adam{cfg.lr_d_crf, cfg.beta1, cfg.beta2};
    s.opt_g = Adam{cfg.lr_g, cfg.beta1, cfg.beta2};
    s.opt_e = Adam{cfg.lr_e, cfg.beta1, cfg.beta2};
    s.opt_max.init_like(s.max_player_params());
    s.opt_g.init_like(s.gen_params());
    s.opt_e.init_like(s.recon_params());
    return s;
}

namespace {

void add_store(Checkpoint& c, const ParamStore& p) {
    for (const auto& t : p.tensors) c.tensors.push_back(t);
}

void add_moments(Checkpoint& c, const std::string& prefix, const Adam& opt) {
    for (std::size_t i = 0; i < opt.m.size(); ++i) {
        c.tensors.push_back({prefix + ".m" + std::to_string(i), opt.m[i]});
        c.tensors.push_back({prefix + ".v" + std::to_string(i), opt.v[i]});
    }
    c.meta[prefix + ".steps"] = std::to_string(opt.steps);
}

void restore_store(const Checkpoint& c, ParamStore& p) {
    for (auto& t : p.tensors) {
        const Tensor* src = c.find(t.name);
        if (!src) throw IntegrityError("checkpoint: missing tensor " + t.name);
        if (src->shape != t.value.shape)
            throw IntegrityError("checkpoint: shape mismatch for " + t.name);
        t.value = *src;
    }
}

void restore_moments(const Checkpoint& c, const std::string& prefix, Adam& opt) {
    for (std::size_t i = 0; i < opt.m.size(); ++i) {
        const Tensor* m = c.find(prefix + ".m" + std::to_string(i));
        const Tensor* v = c.find(prefix + ".v" + std::to_string(i));
        if (!m || !v) throw IntegrityError("checkpoint: missing moments for " + prefix);
        opt.m[i] = *m;
        opt.v[i] = *v;
    }
    opt.steps = std::stol(c.meta.at(prefix + ".steps"));
}

}  // namespace

Checkpoint TrainState::to_checkpoint() const {
    Checkpoint c;
    c.graph_fingerprint = model.combined_fingerprint();
    c.meta["config"] = cfg.to_json();
    c.meta["iteration"] = std::to_string(iteration);
    c.meta["rng"] = rng.serialize();
    add_store(c, model.p_g1);
    add_store(c, model.p_g2);
    add_store(c, model.p_enc);
    add_store(c, model.p_disc);
    add_store(c, crf.params);
    add_moments(c, "opt_max", opt_max);
    add_moments(c, "opt_g", opt_g);
    add_moments(c, "opt_e", opt_e);
    return c;
}

TrainState TrainState::from_checkpoint(const Checkpoint& c) {
    TrainState s = init(TrainConfig::from_json(c.meta.at("config")));
    if (c.graph_fingerprint != s.model.combined_fingerprint())
        throw IntegrityError("checkpoint: graph fingerprint does not match this architecture");
    restore_store(c, s.model.p_g1);
    restore_store(c, s.model.p_g2);
    restore_store(c, s.model.p_enc);
    restore_store(c, s.model.p_disc);
    restore_store(c, s.crf.params);
    restore_moments(c, "opt_max", s.opt_max);
    restore_moments(c, "opt_g", s.opt_g);
    restore_moments(c, "opt_e", s.opt_e);
    s.iteration = std::stol(c.meta.at("iteration"));
    s.rng.deserialize(c.meta.at("rng"));
    return s;
}

EmbeddingGrid encode_full_volume(const GanModel& m, const Volume3D& v) {
    const GridGeometry geo = m.cfg.geometry();
    if (v.shape != geo.full_shape)
        throw GeometryError("encode_full_volume: volume does not match geometry");
    const int c = geo.sub_extent, d = geo.embed_shape[0];
    if (d % c != 0) throw GeometryError("encode_full_volume: sub-extent must divide depth");
    EmbeddingGrid full(m.cfg.embed_channels, d, geo.embed_shape[1], geo.embed_shape[2]);
    const std::int64_t plane = static_cast<std::int64_t>(geo.embed_shape[1]) * geo.embed_shape[2];
    for (int r = 0; r < d; r += c) {
        const Volume3D slab = extract_voxel_subvolume(v, selector_at(geo, r));
        const EmbeddingGrid part = encoder_forward(m, slab);
        for (int ch = 0; ch < full.channels; ++ch)
            std::copy_n(part.data.begin() + static_cast<std::int64_t>(ch) * c * plane, c * plane,
                        full.data.begin() + (static_cast<std::int64_t>(ch) * d + r) * plane);
    }
    return full;
}

namespace {

struct TapeModel {
    std::vector<Var> g1, g2, enc, disc;
    CrfVars crf;
};

TapeModel load_all(Tape& t, TrainState& s) {
    TapeModel tm;
    tm.g1 = load_params(t, s.model.p_g1);
    tm.g2 = load_params(t, s.model.p_g2);
    tm.enc = load_params(t, s.model.p_enc);
    tm.disc = load_params(t, s.model.p_disc);
    tm.crf = load_crf_params(t, s.crf);
    return tm;
}

// Gradients for a parameter group, in registration order; untouched leaves
// contribute zero.
std::vector<Tensor> collect_grads(Tape& t, const std::vector<Var>& vars) {
    std::vector<Tensor> out;
    out.reserve(vars.size());
    for (Var v : vars)
        out.push_back(t.touched(v) ? t.grad(v) : Tensor::zeros_like(t.val(v)));
    return out;
}

Var clamp_score(Tape& t, Var s) { return ops::clamp(t, s, kScoreEps, 1.0 - kScoreEps); }

Var disc_score(Tape& t, TrainState& s, const TapeModel& tm, Var slab) {
    return clamp_score(t, forward(t, s.model.disc, tm.disc, slab));
}

// Encode a full volume slab-wise on the tape and concatenate along depth.
Var encode_full_var(Tape& t, TrainState& s, const TapeModel& tm, const Volume3D& v) {
    const GridGeometry geo = s.cfg.model.geometry();
    const int c = geo.sub_extent, d = geo.embed_shape[0];
    std::vector<Var> parts;
    for (int r = 0; r < d; r += c) {
        const Volume3D slab = extract_voxel_subvolume(v, selector_at(geo, r));
        Var x = ops::constant(t, volume_to_tensor(slab));
        parts.push_back(forward(t, s.model.enc, tm.enc, x));
    }
    return ops::concat(t, 1, parts);
}

Tensor sample_latent(TrainState& s) {
    Tensor z({s.cfg.model.latent_dim});
    for (double& x : z.v) x = s.rng.normal();
    return z;
}

std::string dump_diagnostics(long iter, const LossBundle& b) {
    std::ostringstream os;
    os << "non-finite loss at iteration " << iter << ": d_crf=" << b.d_and_crf_loss
       << " g=" << b.g_loss << " recon=" << b.recon_loss << " d_real=" << b.d_real
       << " d_fake=" << b.d_fake << " crf_real=" << b.crf_real << " crf_fake=" << b.crf_fake;
    return os.str();
}

}  // namespace

LossBundle train_step(TrainState& s, const std::vector<Volume3D>& batch) {
    const GridGeometry geo = s.cfg.model.geometry();
    if (batch.empty()) throw ParameterError("train_step: empty batch");
    for (const auto& v : batch)
        if (v.shape != geo.full_shape)
            throw GeometryError("train_step: batch volume does not match geometry");
    const int b_count = static_cast<int>(batch.size());
    const double inv_b = 1.0 / b_count;
    LossBundle bundle;

    const SubVolumeSelector sel = sample_offset(geo, s.rng);
    std::vector<Tensor> latents;
    for (int b = 0; b < b_count; ++b) latents.push_back(sample_latent(s));

    // Phase 1: max player (D + CRF).
    {
        Tape t;
        TapeModel tm = load_all(t, s);
        std::vector<Var> losses;
        for (int b = 0; b < b_count; ++b) {
            const Volume3D x_r = extract_voxel_subvolume(batch[b], sel);
            Var z = ops::constant(t, latents[b]);
            Var a = forward(t, s.model.g1, tm.g1, z);
            Var a_r = ops::slice(t, a, 1, sel.offset, geo.sub_extent);
            Var fake = forward(t, s.model.g2, tm.g2, a_r);
            Var d_fake = disc_score(t, s, tm, fake);
            Var d_real = disc_score(t, s, tm, ops::constant(t, volume_to_tensor(x_r)));
            Var crf_fake = crf_score_var(t, tm.crf, a, s.crf.n_max, s.crf.mf_iters);
            Var e_full = encode_full_var(t, s, tm, batch[b]);
            Var crf_real = crf_score_var(t, tm.crf, e_full, s.crf.n_max, s.crf.mf_iters);
            losses.push_back(crfgan_loss_max_var(t, d_real, d_fake, crf_real, crf_fake));
            bundle.d_real += t.val(d_real).item() * inv_b;
            bundle.d_fake += t.val(d_fake).item() * inv_b;
            bundle.crf_real += t.val(crf_real).item() * inv_b;
            bundle.crf_fake += t.val(crf_fake).item() * inv_b;
        }
        Var loss = losses.size() == 1 ? losses[0] : ops::mean(t, ops::concat(t, 0, losses));
        bundle.d_and_crf_loss = t.val(loss).item();
        t.backward(loss);
        std::vector<Var> vars = tm.disc;
        vars.push_back(tm.crf.unary_w);
        vars.push_back(tm.crf.unary_b);
        vars.push_back(tm.crf.w);
        vars.push_back(tm.crf.theta);
        auto grads = collect_grads(t, vars);
        auto params = s.max_player_params();
        s.opt_max.step(params, grads, params.size());
        s.crf.project();
    }

    // Phase 2: generator (G1 + G2), fresh latents, non-saturating objective.
    {
        Tape t;
        TapeModel tm = load_all(t, s);
        std::vector<Var> losses;
        for (int b = 0; b < b_count; ++b) {
            Var z = ops::constant(t, sample_latent(s));
            Var a = forward(t, s.model.g1, tm.g1, z);
            Var a_r = ops::slice(t, a, 1, sel.offset, geo.sub_extent);
            Var fake = forward(t, s.model.g2, tm.g2, a_r);
            Var d_fake = disc_score(t, s, tm, fake);
            Var crf_fake = crf_score_var(t, tm.crf, a, s.crf.n_max, s.crf.mf_iters);
            losses.push_back(crfgan_loss_g_var(t, d_fake, crf_fake));
        }
        Var loss = losses.size() == 1 ? losses[0] : ops::mean(t, ops::concat(t, 0, losses));
        loss = ops::scale(t, loss, s.cfg.adv_weight);
        bundle.g_loss = t.val(loss).item();
        t.backward(loss);
        std::vector<Var> vars = tm.g1;
        vars.insert(vars.end(), tm.g2.begin(), tm.g2.end());
        auto grads = collect_grads(t, vars);
        auto params = s.gen_params();
        s.opt_g.step(params, grads, params.size());
    }

    // Phase 3: reconstruction pathway (E, and optionally G2).
    {
        Tape t;
        TapeModel tm = load_all(t, s);
        std::vector<Var> losses;
        for (int b = 0; b < b_count; ++b) {
            const Volume3D x_r = extract_voxel_subvolume(batch[b], sel);
            Var x = ops::constant(t, volume_to_tensor(x_r));
            Var a_hat = forward(t, s.model.enc, tm.enc, x);
            Var x_hat = forward(t, s.model.g2, tm.g2, a_hat);
            losses.push_back(reconstruct_loss_var(t, x, x_hat));
        }
        Var loss = losses.size() == 1 ? losses[0] : ops::mean(t, ops::concat(t, 0, losses));
        loss = ops::scale(t, loss, s.cfg.recon_weight);
        bundle.recon_loss = t.val(loss).item();
        t.backward(loss);
        std::vector<Var> vars = tm.enc;
        vars.insert(vars.end(), tm.g2.begin(), tm.g2.end());
        auto grads = collect_grads(t, vars);
        auto params = s.recon_params();
        const std::size_t count =
            s.cfg.recon_updates_g2 ? params.size() : s.model.p_enc.tensors.size();
        s.opt_e.step(params, grads, count);
    }

    ++s.iteration;
    if (!bundle.finite()) throw NumericError(dump_diagnostics(s.iteration, bundle));
    return bundle;
}

std::vector<Volume3D> load_dataset(const std::string& dir) {
    std::vector<std::string> paths;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_regular_file() && entry.path().extension() == ".raw")
            paths.push_back(entry.path().string());
    std::sort(paths.begin(), paths.end());
    std::vector<Volume3D> out;
    out.reserve(paths.size());
    for (const auto& p : paths) out.push_back(load_volume(p));
    if (out.empty()) throw ParameterError("dataset: no .raw volumes in " + dir);
    for (const auto& v : out)
        if (v.shape != out.front().shape)
            throw GeometryError("dataset: inconsistent volume shapes in " + dir);
    return out;
}

TrainState train(const TrainConfig& cfg, const std::vector<Volume3D>& dataset,
                 const std::string& out_dir, const std::string& resume_from,
                 const TrainCallbacks& callbacks) {
    if (dataset.empty()) throw ParameterError("train: empty dataset");
    fs::create_directories(out_dir);

    TrainState s;
    if (resume_from.empty()) {
        s = TrainState::init(cfg);
    } else {
        s = TrainState::from_checkpoint(load_checkpoint(resume_from));
        // Architecture is pinned by the checkpoint; run control and optimizer
        // hyperparameters follow the caller's config so training can extend.
        const ModelConfig &a = cfg.model, &b = s.cfg.model;
        if (a.resolution != b.resolution || a.scale != b.scale || a.sub_extent != b.sub_extent ||
            a.embed_channels != b.embed_channels || a.latent_dim != b.latent_dim ||
            a.d_base_channels != b.d_base_channels || a.d_max_channels != b.d_max_channels)
            throw IntegrityError("train: resume config architecture differs from checkpoint");
        s.cfg = cfg;
        s.opt_max.lr = cfg.lr_d_crf;
        s.opt_g.lr = cfg.lr_g;
        s.opt_e.lr = cfg.lr_e;
        s.opt_max.beta1 = s.opt_g.beta1 = s.opt_e.beta1 = cfg.beta1;
        s.opt_max.beta2 = s.opt_g.beta2 = s.opt_e.beta2 = cfg.beta2;
        s.crf.mf_iters = cfg.mf_iters;
        s.crf.n_max = cfg.n_max_patches;
    }
    const GridGeometry geo = s.cfg.model.geometry();
    for (const auto& v : dataset)
        if (v.shape != geo.full_shape)
            throw GeometryError("train: dataset volume does not match configured geometry");

    const std::string csv_path = out_dir + "/metrics.csv";
    std::ofstream csv;
    if (resume_from.empty()) {
        csv.open(csv_path, std::ios::trunc);
        csv << kMetricsCsvHeader << "\n";
    } else {
        csv.open(csv_path, std::ios::app);
    }

    auto write_checkpoint = [&](long iter) {
        save_checkpoint(s.to_checkpoint(), out_dir + "/checkpoint_" + std::to_string(iter) + ".ckpt");
    };
    auto dump_sample = [&](long iter) {
        Tensor z = sample_latent(s);
        const EmbeddingGrid a = g1_forward(s.model, z.v);
        const Volume3D v = g2_forward(s.model, a);
        save_volume(v, out_dir + "/sample_" + std::to_string(iter) + ".raw");
    };

    if (s.cfg.iterations == 0 || s.iteration >= s.cfg.iterations) write_checkpoint(s.iteration);

    while (s.iteration < s.cfg.iterations) {
        std::vector<Volume3D> batch;
        for (int b = 0; b < s.cfg.batch_size; ++b)
            batch.push_back(dataset[s.rng.uniform_int(dataset.size())]);
        const LossBundle bundle = train_step(s, batch);
        char line[512];
        std::snprintf(line, sizeof(line), "%ld,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g",
                      s.iteration, bundle.d_and_crf_loss, bundle.g_loss, bundle.recon_loss,
                      bundle.d_real, bundle.d_fake, bundle.crf_real, bundle.crf_fake);
        csv << line << "\n";
        csv.flush();
        if (callbacks.on_log && (s.iteration % std::max(1, s.cfg.log_every) == 0 ||
                                 s.iteration == s.cfg.iterations))
            callbacks.on_log(s.iteration, bundle);
        if (s.cfg.checkpoint_every > 0 && s.iteration % s.cfg.checkpoint_every == 0) {
            write_checkpoint(s.iteration);
            dump_sample(s.iteration);
        }
    }
    write_checkpoint(s.iteration);
    return s;
}

}  // namespace crfgan
