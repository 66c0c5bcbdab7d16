#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "crfgan/bench.hpp"

using namespace crfgan;

namespace {

TrainConfig config_at(int resolution) {
    TrainConfig cfg;
    cfg.model.resolution = resolution;
    return cfg;  // all other knobs at their defaults
}

TrainConfig tiny_config() {
    TrainConfig cfg;
    cfg.model.resolution = 16;
    cfg.model.scale = 4;
    cfg.model.sub_extent = 2;
    cfg.model.embed_channels = 4;
    cfg.model.latent_dim = 8;
    cfg.model.d_base_channels = 4;
    cfg.model.d_max_channels = 8;
    cfg.batch_size = 1;
    cfg.seed = 3;
    return cfg;
}

}  // namespace

TEST_CASE("param totals are positive, consistent, and grow with resolution") {
    std::int64_t prev = 0;
    for (int res : {64, 128, 256}) {
        const ParamReport r = param_report(config_at(res), false);
        CHECK(r.core_total > prev);
        CHECK(r.total == r.core_total);  // surrogate stays out of the total
        CHECK(r.surrogate_extra > 0);    // but is still reported for context
        CHECK_FALSE(r.includes_surrogate);
        std::int64_t sum = 0;
        for (const ParamRow& row : r.rows) {
            CHECK(row.params > 0);
            sum += row.params;
        }
        CHECK(sum == r.core_total);
        prev = r.core_total;
    }
}

TEST_CASE("CRF head is a sub-percent sliver of the model") {
    for (int res : {64, 128, 256}) {
        const ParamReport r = param_report(config_at(res), false);
        std::int64_t crf = -1;
        for (const ParamRow& row : r.rows)
            if (row.module == "CRF head") crf = row.params;
        REQUIRE(crf >= 0);
        // C*2 weights + 2 biases + w + theta at the configured channel count
        const TrainConfig cfg = config_at(res);
        CHECK(crf == static_cast<std::int64_t>(cfg.model.embed_channels) * 2 + 2 + 1 + 1);
        CHECK(static_cast<double>(crf) / static_cast<double>(r.core_total) < 0.05);
    }
}

TEST_CASE("dropping the low-res surrogate saves at least 15 percent") {
    for (int res : {64, 128, 256}) {
        const ParamReport with = param_report(config_at(res), true);
        CHECK(with.includes_surrogate);
        CHECK(with.surrogate_extra > 0);
        CHECK(with.total == with.core_total + with.surrogate_extra);
        CHECK(with.reduction_percent >= 15.0);
        const double expected = 100.0 * static_cast<double>(with.surrogate_extra) /
                                static_cast<double>(with.total);
        CHECK(with.reduction_percent == doctest::Approx(expected).epsilon(1e-12));
    }
}

TEST_CASE("graph activation bytes: empty graph and exact batch scaling") {
    const NetGraph empty;
    CHECK(graph_activation_bytes(empty, {1, 8, 8, 8}, 1) == 0);

    const TrainConfig cfg = tiny_config();
    const NetGraph g = build_encoder(cfg.model);
    const std::vector<int> in = {1, cfg.model.sub_extent * cfg.model.scale,
                                 cfg.model.resolution, cfg.model.resolution};
    const std::int64_t one = graph_activation_bytes(g, in, 1);
    CHECK(one > 0);
    CHECK(graph_activation_bytes(g, in, 2) == 2 * one);
    CHECK(graph_activation_bytes(g, in, 7) == 7 * one);
}

TEST_CASE("sub-volume training needs at most half the full-volume activations") {
    TrainConfig cfg = config_at(64);
    cfg.model.sub_extent = 4;  // c = d/4 at scale 4: d = 16
    const MemoryEstimate sub = estimate_activation_memory(cfg, MemoryMode::SubVolume);
    const MemoryEstimate full = estimate_activation_memory(cfg, MemoryMode::FullVolume);
    CHECK(sub.activation_bytes > 0);
    CHECK(sub.activation_bytes * 2 <= full.activation_bytes);
    // parameters and moments do not depend on the mode
    CHECK(sub.param_bytes == full.param_bytes);
    CHECK(sub.moment_bytes == 2 * sub.param_bytes);
    CHECK(sub.total_bytes == sub.param_bytes + sub.moment_bytes + sub.activation_bytes);
}

TEST_CASE("activation estimate is exactly linear in the batch size") {
    TrainConfig cfg = tiny_config();
    cfg.batch_size = 1;
    const MemoryEstimate b1 = estimate_activation_memory(cfg, MemoryMode::SubVolume);
    cfg.batch_size = 2;
    const MemoryEstimate b2 = estimate_activation_memory(cfg, MemoryMode::SubVolume);
    cfg.batch_size = 6;
    const MemoryEstimate b6 = estimate_activation_memory(cfg, MemoryMode::SubVolume);
    CHECK(b2.activation_bytes == 2 * b1.activation_bytes);
    CHECK(b6.activation_bytes == 6 * b1.activation_bytes);
    CHECK(b1.param_bytes == b6.param_bytes);
}

TEST_CASE("measure_speed runs real steps and reports sane numbers") {
    const SpeedReport r = measure_speed(tiny_config(), 10);
    CHECK(r.measured_steps == 10);
    CHECK(r.median_seconds_per_iter > 0.0);
    CHECK(std::isfinite(r.median_seconds_per_iter));
    CHECK(r.iters_per_sec == doctest::Approx(1.0 / r.median_seconds_per_iter));
    CHECK_FALSE(r.environment.empty());
    CHECK_THROWS_AS(measure_speed(tiny_config(), 5), ParameterError);
}

TEST_CASE("report formatters emit tables and parseable CSV") {
    const ParamReport p = param_report(config_at(64), true);
    const std::string table = format_param_report(p);
    CHECK(table.find("G1") != std::string::npos);
    CHECK(table.find("CRF") != std::string::npos);
    const std::string csv = param_report_csv(p);
    CHECK(csv.find("module,params") == 0);

    const MemoryEstimate e = estimate_activation_memory(config_at(64), MemoryMode::SubVolume);
    CHECK(memory_estimate_csv(e).find("mode,") == 0);
    CHECK_FALSE(format_memory_estimate(e).empty());
}
