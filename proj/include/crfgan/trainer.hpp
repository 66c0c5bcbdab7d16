#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "crfgan/checkpoint.hpp"
#include "crfgan/crf.hpp"
#include "crfgan/losses.hpp"
#include "crfgan/netspec.hpp"

namespace crfgan {

struct TrainConfig {
    ModelConfig model;
    int batch_size = 2;
    double lr_g = 1e-4;
    double lr_e = 1e-4;
    double lr_d_crf = 4e-4;  // two-timescale: max player steps faster
    double beta1 = 0.0;
    double beta2 = 0.999;
    int iterations = 1000;
    int checkpoint_every = 500;
    int log_every = 25;
    std::uint64_t seed = 0;
    double adv_weight = 1.0;
    double recon_weight = 1.0;
    bool recon_updates_g2 = true;  // Eq.-4 pathway also trains G2's weights
    double crf_w_init = 0.1;
    double crf_theta_init = 1.0;
    int mf_iters = 5;
    int n_max_patches = 512;

    void validate() const;
    std::string to_json() const;
    static TrainConfig from_json(const std::string& text);
    static TrainConfig from_json_file(const std::string& path);
    void to_json_file(const std::string& path) const;
};

// Adam with bias correction; moments are named tensors for checkpointing.
struct Adam {
    double lr = 1e-4, beta1 = 0.0, beta2 = 0.999, eps = 1e-8;
    long steps = 0;
    std::vector<Tensor> m, v;

    void init_like(const std::vector<Tensor*>& params);
    // Updates params[0..count); moment slots stay aligned with registration
    // order, so a shorter count freezes the tail.
    void step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads,
              std::size_t count);
};

struct TrainState {
    TrainConfig cfg;
    GanModel model;
    CrfModel crf;
    Rng rng;
    long iteration = 0;
    Adam opt_max;  // D + CRF
    Adam opt_g;    // G1 + G2
    Adam opt_e;    // E (+ G2 when recon_updates_g2)

    static TrainState init(const TrainConfig& cfg);
    Checkpoint to_checkpoint() const;
    static TrainState from_checkpoint(const Checkpoint& c);

    std::vector<Tensor*> max_player_params();
    std::vector<Tensor*> gen_params();
    std::vector<Tensor*> recon_params();  // enc first, then g2
};

// One full alternation: max player (D+CRF), then generator, then the
// reconstruction pathway. Throws NumericError with a diagnostic dump if any
// loss goes non-finite.
LossBundle train_step(TrainState& state, const std::vector<Volume3D>& batch);

// Encode a full volume slab-by-slab and reassemble the embedding grid, so
// the CRF sees every patch of the real image.
EmbeddingGrid encode_full_volume(const GanModel& m, const Volume3D& v);

struct TrainCallbacks {
    std::function<void(long iter, const LossBundle&)> on_log;
};

// Runs the loop with CSV logging, periodic checkpoints, and sample dumps
// under out_dir. Returns the final state.
TrainState train(const TrainConfig& cfg, const std::vector<Volume3D>& dataset,
                 const std::string& out_dir, const std::string& resume_from = "",
                 const TrainCallbacks& callbacks = {});

// All *.raw volumes in a directory, sorted by filename.
std::vector<Volume3D> load_dataset(const std::string& dir);

inline const char* kMetricsCsvHeader = "iter,loss_d_crf,loss_g,loss_recon,d_real,d_fake,crf_real,crf_fake";

}  // namespace crfgan
