#include "crfgan/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <sstream>

namespace crfgan {

namespace {

std::int64_t crf_param_count(int embed_dim) {
    return static_cast<std::int64_t>(embed_dim) * 2 + 2 + 1 + 1;
}

}  // namespace

ParamReport param_report(const TrainConfig& cfg, bool include_surrogate) {
    const ModelConfig& mc = cfg.model;
    ParamReport r;
    r.includes_surrogate = include_surrogate;
    const NetGraph g1 = build_g1(mc), g2 = build_g2(mc), enc = build_encoder(mc),
                   disc = build_discriminator(mc);
    r.rows.push_back({"G1 (embedding generator)", count_params(g1)});
    r.rows.push_back({"G2 (voxel generator)", count_params(g2)});
    r.rows.push_back({"E (half encoder)", count_params(enc)});
    r.rows.push_back({"D (discriminator)", count_params(disc)});
    r.rows.push_back({"CRF head", crf_param_count(mc.embed_channels)});
    for (const auto& row : r.rows) r.core_total += row.params;

    for (const NetGraph& g : build_surrogate_lowres_branch(mc))
        r.surrogate_extra += count_params(g);
    const std::int64_t with_surrogate = r.core_total + r.surrogate_extra;
    r.reduction_percent =
        100.0 * static_cast<double>(r.surrogate_extra) / static_cast<double>(with_surrogate);
    r.total = include_surrogate ? with_surrogate : r.core_total;
    if (include_surrogate)
        r.rows.push_back({"low-res branch (surrogate, untrained)", r.surrogate_extra});
    return r;
}

std::int64_t graph_activation_bytes(const NetGraph& g, const std::vector<int>& input_shape,
                                    int batch) {
    std::int64_t elems = 0;  // layer outputs only; a 0-layer graph costs nothing
    for (const auto& s : activation_shapes(g, input_shape)) elems += Tensor::numel(s);
    return elems * 8 * batch * 2;  // float64, forward value + retained gradient
}

MemoryEstimate estimate_activation_memory(const TrainConfig& cfg, MemoryMode mode) {
    const ModelConfig& mc = cfg.model;
    const GridGeometry geo = mc.geometry();
    MemoryEstimate e;
    e.batch = cfg.batch_size;
    e.mode = mode;

    const NetGraph g1 = build_g1(mc), g2 = build_g2(mc), enc = build_encoder(mc),
                   disc = build_discriminator(mc);
    std::int64_t params = count_params(g1) + count_params(g2) + count_params(enc) +
                          count_params(disc) + crf_param_count(mc.embed_channels);
    e.param_bytes = params * 8;
    e.moment_bytes = params * 16;

    const int depth =
        mode == MemoryMode::SubVolume ? geo.sub_extent * geo.scale : geo.full_shape[0];
    const int embed_depth =
        mode == MemoryMode::SubVolume ? geo.sub_extent : geo.embed_shape[0];
    const std::vector<int> vox_in = {1, depth, geo.full_shape[1], geo.full_shape[2]};
    const std::vector<int> emb_in = {mc.embed_channels, embed_depth, geo.embed_shape[1],
                                     geo.embed_shape[2]};

    // G1 and the CRF always see the whole embedding grid in both modes.
    e.activation_bytes += graph_activation_bytes(g1, g1.input_shape, cfg.batch_size);
    const std::int64_t n =
        std::min<std::int64_t>(geo.embed_shape[0] * geo.embed_shape[1] * geo.embed_shape[2],
                               cfg.n_max_patches);
    const std::int64_t crf_elems =
        n * mc.embed_channels + n * n + 2 * n * (cfg.mf_iters + 1);
    e.activation_bytes += crf_elems * 8 * cfg.batch_size * 2;

    // G2, E, D see a depth slab in sub-volume mode, the whole grid otherwise.
    e.activation_bytes += graph_activation_bytes(g2, emb_in, cfg.batch_size);
    e.activation_bytes += graph_activation_bytes(enc, vox_in, cfg.batch_size);
    e.activation_bytes += graph_activation_bytes(disc, vox_in, cfg.batch_size);

    e.total_bytes = e.param_bytes + e.moment_bytes + e.activation_bytes;
    return e;
}

SpeedReport measure_speed(const TrainConfig& cfg, int steps) {
    if (steps < 10) throw ParameterError("measure_speed: steps must be >= 10");
    const GridGeometry geo = cfg.model.geometry();

    // Synthetic in-memory dataset: a couple of seeded phantoms at the
    // configured resolution.
    PhantomSpec ps;
    ps.shape = geo.full_shape;
    ps.seed = cfg.seed + 1;
    std::vector<Volume3D> dataset;
    for (int i = 0; i < 2; ++i) {
        ps.seed += 1;
        dataset.push_back(make_phantom(ps));
    }

    TrainState s = TrainState::init(cfg);
    auto run_step = [&]() {
        std::vector<Volume3D> batch;
        for (int b = 0; b < cfg.batch_size; ++b)
            batch.push_back(dataset[s.rng.uniform_int(dataset.size())]);
        train_step(s, batch);
    };

    SpeedReport r;
    r.measured_steps = steps;
    for (int i = 0; i < r.warmup_steps; ++i) run_step();
    std::vector<double> secs;
    secs.reserve(steps);
    for (int i = 0; i < steps; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        run_step();
        const auto t1 = std::chrono::steady_clock::now();
        secs.push_back(std::chrono::duration<double>(t1 - t0).count());
    }
    std::sort(secs.begin(), secs.end());
    const double median = steps % 2 == 1 ? secs[steps / 2]
                                         : 0.5 * (secs[steps / 2 - 1] + secs[steps / 2]);
    r.median_seconds_per_iter = median;
    r.iters_per_sec = 1.0 / median;
    std::ostringstream env;
    env << "cpu-float64 res=" << cfg.model.resolution << " batch=" << cfg.batch_size;
    r.environment = env.str();
    return r;
}

namespace {

std::string aligned_table(const std::vector<std::pair<std::string, std::string>>& rows) {
    std::size_t w = 0;
    for (const auto& [k, _] : rows) w = std::max(w, k.size());
    std::ostringstream os;
    for (const auto& [k, v] : rows)
        os << std::left << std::setw(static_cast<int>(w) + 2) << k << v << "\n";
    return os.str();
}

std::string mb(std::int64_t bytes) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(2) << static_cast<double>(bytes) / (1024.0 * 1024.0)
       << " MB";
    return os.str();
}

}  // namespace

std::string format_param_report(const ParamReport& r) {
    std::vector<std::pair<std::string, std::string>> rows;
    for (const auto& row : r.rows) rows.push_back({row.module, std::to_string(row.params)});
    rows.push_back({"total", std::to_string(r.total)});
    if (r.includes_surrogate) {
        std::ostringstream os;
        os << std::fixed << std::setprecision(1) << r.reduction_percent << "%";
        rows.push_back({"reduction vs two-GAN baseline", os.str()});
    }
    return aligned_table(rows);
}

std::string param_report_csv(const ParamReport& r) {
    std::ostringstream os;
    os << "module,params\n";
    for (const auto& row : r.rows) os << row.module << "," << row.params << "\n";
    os << "total," << r.total << "\n";
    return os.str();
}

std::string format_memory_estimate(const MemoryEstimate& e) {
    return aligned_table({
        {"mode", e.mode == MemoryMode::SubVolume ? "sub-volume" : "full-volume"},
        {"batch", std::to_string(e.batch)},
        {"parameters", mb(e.param_bytes)},
        {"optimizer moments", mb(e.moment_bytes)},
        {"activations", mb(e.activation_bytes)},
        {"total", mb(e.total_bytes)},
    });
}

std::string memory_estimate_csv(const MemoryEstimate& e) {
    std::ostringstream os;
    os << "mode,batch,param_bytes,moment_bytes,activation_bytes,total_bytes\n"
       << (e.mode == MemoryMode::SubVolume ? "sub" : "full") << "," << e.batch << ","
       << e.param_bytes << "," << e.moment_bytes << "," << e.activation_bytes << ","
       << e.total_bytes << "\n";
    return os.str();
}

std::string format_speed_report(const SpeedReport& r) {
    std::ostringstream a, b;
    a << std::fixed << std::setprecision(4) << r.iters_per_sec;
    b << std::fixed << std::setprecision(6) << r.median_seconds_per_iter;
    return aligned_table({
        {"iterations/sec (median)", a.str()},
        {"sec/iteration (median)", b.str()},
        {"measured steps", std::to_string(r.measured_steps)},
        {"warmup steps", std::to_string(r.warmup_steps)},
        {"environment", r.environment},
    });
}

std::string speed_report_csv(const SpeedReport& r) {
    std::ostringstream os;
    os << "iters_per_sec,median_sec_per_iter,measured_steps,warmup_steps,environment\n"
       << r.iters_per_sec << "," << r.median_seconds_per_iter << "," << r.measured_steps << ","
       << r.warmup_steps << "," << r.environment << "\n";
    return os.str();
}

}  // namespace crfgan
