#pragma once

#include <string>
#include <vector>

#include "crfgan/trainer.hpp"

namespace crfgan {

struct ParamRow {
    std::string module;
    std::int64_t params = 0;
};

struct ParamReport {
    std::vector<ParamRow> rows;          // per-module counts
    std::int64_t core_total = 0;         // G1+G2+E+D+CRF
    std::int64_t surrogate_extra = 0;    // low-res branch, parameter-count only
    std::int64_t total = 0;              // core (+ surrogate when included)
    bool includes_surrogate = false;
    // (with-surrogate - core) / with-surrogate, in percent; the directional
    // analogue of the paper's two-GAN-baseline overhead.
    double reduction_percent = 0.0;
};

ParamReport param_report(const TrainConfig& cfg, bool include_surrogate);

enum class MemoryMode { SubVolume, FullVolume };

struct MemoryEstimate {
    std::int64_t param_bytes = 0;
    std::int64_t moment_bytes = 0;       // two Adam moments per parameter
    std::int64_t activation_bytes = 0;   // forward + retained-for-backward
    std::int64_t total_bytes = 0;
    int batch = 0;
    MemoryMode mode = MemoryMode::SubVolume;
};

// Analytic accounting: sum over layers of output-tensor bytes x batch x 2,
// plus input tensors, plus parameter and optimizer-moment bytes. Pure
// function of the config.
MemoryEstimate estimate_activation_memory(const TrainConfig& cfg, MemoryMode mode);

// Activation bytes for a single graph and input (batch 1 = one sample):
// sum of per-layer output elements x 8 x batch x 2; empty graph -> 0.
std::int64_t graph_activation_bytes(const NetGraph& g, const std::vector<int>& input_shape,
                                    int batch);

struct SpeedReport {
    double iters_per_sec = 0.0;
    double median_seconds_per_iter = 0.0;
    int measured_steps = 0;
    int warmup_steps = 5;
    std::string environment;  // host descriptor
};

// Runs real training steps on a synthetic in-memory dataset; wall-clock
// median over `steps` after 5 warm-up steps. steps >= 10.
SpeedReport measure_speed(const TrainConfig& cfg, int steps);

// Aligned-column text tables and CSV mirrors.
std::string format_param_report(const ParamReport& r);
std::string param_report_csv(const ParamReport& r);
std::string format_memory_estimate(const MemoryEstimate& e);
std::string memory_estimate_csv(const MemoryEstimate& e);
std::string format_speed_report(const SpeedReport& r);
std::string speed_report_csv(const SpeedReport& r);

}  // namespace crfgan
