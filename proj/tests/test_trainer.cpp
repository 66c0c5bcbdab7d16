#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "crfgan/trainer.hpp"

using namespace crfgan;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("crfgan_train_" + std::to_string(::getpid()) + "_" +
                std::to_string(reinterpret_cast<std::uintptr_t>(this)));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string dir() const { return path.string(); }
};

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
    cfg.iterations = 4;
    cfg.checkpoint_every = 2;
    cfg.log_every = 1;
    cfg.seed = 13;
    return cfg;
}

std::vector<Volume3D> tiny_dataset(int count, int size, std::uint64_t seed) {
    PhantomSpec spec;
    spec.shape = {size, size, size};
    std::vector<Volume3D> out;
    for (int i = 0; i < count; ++i) {
        spec.seed = seed + static_cast<std::uint64_t>(i);
        out.push_back(make_phantom(spec));
    }
    return out;
}

bool stores_equal(const ParamStore& a, const ParamStore& b) {
    if (a.tensors.size() != b.tensors.size()) return false;
    for (std::size_t i = 0; i < a.tensors.size(); ++i)
        if (a.tensors[i].value.v != b.tensors[i].value.v) return false;
    return true;
}

bool bundles_equal(const LossBundle& a, const LossBundle& b) {
    return a.d_and_crf_loss == b.d_and_crf_loss && a.g_loss == b.g_loss &&
           a.recon_loss == b.recon_loss && a.d_real == b.d_real && a.d_fake == b.d_fake &&
           a.crf_real == b.crf_real && a.crf_fake == b.crf_fake;
}

}  // namespace

TEST_CASE("config JSON round-trip and validation") {
    TrainConfig cfg = tiny_config();
    cfg.lr_g = 3e-4;
    cfg.recon_updates_g2 = false;
    const TrainConfig back = TrainConfig::from_json(cfg.to_json());
    CHECK(back.model.resolution == cfg.model.resolution);
    CHECK(back.lr_g == cfg.lr_g);
    CHECK(back.recon_updates_g2 == cfg.recon_updates_g2);
    CHECK(back.seed == cfg.seed);

    CHECK_THROWS_AS(TrainConfig::from_json("{bad"), FormatError);
    TrainConfig bad = tiny_config();
    bad.batch_size = 0;
    CHECK_THROWS_AS(bad.validate(), ParameterError);
    bad = tiny_config();
    bad.model.resolution = 30;  // not divisible cleanly
    CHECK_THROWS_AS(bad.validate(), GeometryError);
}

TEST_CASE("identical seeds give identical loss sequences for 10 steps") {
    const TrainConfig cfg = tiny_config();
    const std::vector<Volume3D> data = tiny_dataset(2, 16, 100);
    TrainState a = TrainState::init(cfg);
    TrainState b = TrainState::init(cfg);
    for (int i = 0; i < 10; ++i) {
        const LossBundle ba = train_step(a, {data[i % 2]});
        const LossBundle bb = train_step(b, {data[i % 2]});
        CHECK(bundles_equal(ba, bb));
        CHECK(ba.finite());
        CHECK(ba.d_real > 0.0);
        CHECK(ba.d_real < 1.0);
        CHECK(ba.crf_fake > 0.0);
        CHECK(ba.crf_fake < 1.0);
    }
}

TEST_CASE("zero learning rates leave parameters bit-unchanged") {
    TrainConfig cfg = tiny_config();
    cfg.lr_g = cfg.lr_e = cfg.lr_d_crf = 0.0;
    const std::vector<Volume3D> data = tiny_dataset(1, 16, 200);
    TrainState s = TrainState::init(cfg);
    const TrainState before = s;
    train_step(s, data);
    CHECK(stores_equal(s.model.p_g1, before.model.p_g1));
    CHECK(stores_equal(s.model.p_g2, before.model.p_g2));
    CHECK(stores_equal(s.model.p_enc, before.model.p_enc));
    CHECK(stores_equal(s.model.p_disc, before.model.p_disc));
    CHECK(stores_equal(s.crf.params, before.crf.params));
}

TEST_CASE("each phase touches only its own player's parameters") {
    const std::vector<Volume3D> data = tiny_dataset(1, 16, 300);

    // Freeze generator and reconstruction: only D+CRF moves.
    {
        TrainConfig cfg = tiny_config();
        cfg.lr_g = cfg.lr_e = 0.0;
        TrainState s = TrainState::init(cfg);
        const TrainState before = s;
        train_step(s, data);
        CHECK_FALSE(stores_equal(s.model.p_disc, before.model.p_disc));
        CHECK_FALSE(stores_equal(s.crf.params, before.crf.params));
        CHECK(stores_equal(s.model.p_g1, before.model.p_g1));
        CHECK(stores_equal(s.model.p_g2, before.model.p_g2));
        CHECK(stores_equal(s.model.p_enc, before.model.p_enc));
    }
    // Freeze max player and reconstruction: only G1+G2 move.
    {
        TrainConfig cfg = tiny_config();
        cfg.lr_d_crf = cfg.lr_e = 0.0;
        TrainState s = TrainState::init(cfg);
        const TrainState before = s;
        train_step(s, data);
        CHECK_FALSE(stores_equal(s.model.p_g1, before.model.p_g1));
        CHECK_FALSE(stores_equal(s.model.p_g2, before.model.p_g2));
        CHECK(stores_equal(s.model.p_disc, before.model.p_disc));
        CHECK(stores_equal(s.crf.params, before.crf.params));
        CHECK(stores_equal(s.model.p_enc, before.model.p_enc));
    }
    // Freeze adversarial players: E (and G2 via Eq.-4) move, D/CRF/G1 do not.
    {
        TrainConfig cfg = tiny_config();
        cfg.lr_d_crf = cfg.lr_g = 0.0;
        TrainState s = TrainState::init(cfg);
        const TrainState before = s;
        train_step(s, data);
        CHECK_FALSE(stores_equal(s.model.p_enc, before.model.p_enc));
        CHECK_FALSE(stores_equal(s.model.p_g2, before.model.p_g2));
        CHECK(stores_equal(s.model.p_g1, before.model.p_g1));
        CHECK(stores_equal(s.model.p_disc, before.model.p_disc));
        CHECK(stores_equal(s.crf.params, before.crf.params));
    }
    // recon_updates_g2=false restricts the third phase to E only.
    {
        TrainConfig cfg = tiny_config();
        cfg.lr_d_crf = cfg.lr_g = 0.0;
        cfg.recon_updates_g2 = false;
        TrainState s = TrainState::init(cfg);
        const TrainState before = s;
        train_step(s, data);
        CHECK_FALSE(stores_equal(s.model.p_enc, before.model.p_enc));
        CHECK(stores_equal(s.model.p_g2, before.model.p_g2));
    }
}

TEST_CASE("CRF parameters stay inside their domain across updates") {
    TrainConfig cfg = tiny_config();
    cfg.lr_d_crf = 0.05;  // aggressive steps to provoke the projection
    const std::vector<Volume3D> data = tiny_dataset(1, 16, 400);
    TrainState s = TrainState::init(cfg);
    for (int i = 0; i < 10; ++i) {
        train_step(s, data);
        CHECK(s.crf.w() >= 0.0);
        CHECK(s.crf.theta() > 0.0);
    }
}

TEST_CASE("recon loss decreases on a one-sample dataset over 200 steps") {
    TrainConfig cfg = tiny_config();
    cfg.lr_d_crf = 0.0;  // isolate the reconstruction pathway
    cfg.lr_g = 0.0;
    const std::vector<Volume3D> data = tiny_dataset(1, 16, 500);
    TrainState s = TrainState::init(cfg);
    double first = 0.0, last = 0.0;
    for (int i = 0; i < 200; ++i) {
        const LossBundle b = train_step(s, data);
        if (i == 0) first = b.recon_loss;
        last = b.recon_loss;
    }
    CHECK(last < first * 0.8);
}

TEST_CASE("encode_full_volume assembles slab encodings exactly") {
    const TrainConfig cfg = tiny_config();
    TrainState s = TrainState::init(cfg);
    const std::vector<Volume3D> data = tiny_dataset(1, 16, 600);
    const EmbeddingGrid full = encode_full_volume(s.model, data[0]);
    const GridGeometry geo = cfg.model.geometry();
    CHECK(full.shape == geo.embed_shape);
    CHECK(full.channels == cfg.model.embed_channels);
    // slab r=0 of the assembled grid equals encoding the first slab directly
    const EmbeddingGrid part =
        encoder_forward(s.model, extract_voxel_subvolume(data[0], selector_at(geo, 0)));
    const std::int64_t plane =
        static_cast<std::int64_t>(geo.embed_shape[1]) * geo.embed_shape[2];
    for (int c = 0; c < full.channels; ++c)
        for (int z = 0; z < geo.sub_extent; ++z)
            for (std::int64_t p = 0; p < plane; ++p)
                CHECK(part.data[(c * geo.sub_extent + z) * plane + p] ==
                      full.data[(c * geo.embed_shape[0] + z) * plane + p]);
}

TEST_CASE("train loop: CSV header/rows, checkpoints, samples; 0 iterations case") {
    TempDir dir;
    TrainConfig cfg = tiny_config();
    const std::vector<Volume3D> data = tiny_dataset(2, 16, 700);
    train(cfg, data, dir.dir());

    std::ifstream csv(dir.dir() + "/metrics.csv");
    REQUIRE(csv.good());
    std::string header;
    std::getline(csv, header);
    CHECK(header == kMetricsCsvHeader);
    int rows = 0;
    for (std::string line; std::getline(csv, line);)
        if (!line.empty()) ++rows;
    CHECK(rows == cfg.iterations);
    CHECK(fs::exists(dir.dir() + "/checkpoint_2.ckpt"));
    CHECK(fs::exists(dir.dir() + "/checkpoint_4.ckpt"));
    CHECK(fs::exists(dir.dir() + "/sample_2.raw"));

    TempDir dir0;
    cfg.iterations = 0;
    const TrainState s0 = train(cfg, data, dir0.dir());
    CHECK(s0.iteration == 0);
    CHECK(fs::exists(dir0.dir() + "/checkpoint_0.ckpt"));
}

TEST_CASE("checkpoint round-trip reproduces identical subsequent losses") {
    TempDir dir;
    const TrainConfig cfg = tiny_config();
    const std::vector<Volume3D> data = tiny_dataset(1, 16, 800);
    TrainState a = TrainState::init(cfg);
    for (int i = 0; i < 3; ++i) train_step(a, data);
    const std::string p = dir.dir() + "/mid.ckpt";
    save_checkpoint(a.to_checkpoint(), p);
    TrainState b = TrainState::from_checkpoint(load_checkpoint(p));
    CHECK(b.iteration == a.iteration);
    for (int i = 0; i < 3; ++i)
        CHECK(bundles_equal(train_step(a, data), train_step(b, data)));
}

TEST_CASE("checkpoint refuses a different architecture") {
    const TrainConfig cfg = tiny_config();
    TrainState s = TrainState::init(cfg);
    Checkpoint c = s.to_checkpoint();
    TrainConfig other = tiny_config();
    other.model.embed_channels = 8;
    c.meta["config"] = other.to_json();
    CHECK_THROWS_AS(TrainState::from_checkpoint(c), IntegrityError);
}

TEST_CASE("geometry mismatches are rejected") {
    const TrainConfig cfg = tiny_config();
    TrainState s = TrainState::init(cfg);
    const std::vector<Volume3D> wrong = tiny_dataset(1, 32, 900);
    CHECK_THROWS_AS(train_step(s, wrong), GeometryError);
    CHECK_THROWS_AS(train_step(s, {}), ParameterError);
}

TEST_CASE("load_dataset reads sorted raw volumes and validates shapes") {
    TempDir dir;
    const std::vector<Volume3D> data = tiny_dataset(3, 16, 1000);
    for (int i = 0; i < 3; ++i)
        save_volume(data[static_cast<std::size_t>(i)],
                    dir.dir() + "/v" + std::to_string(i) + ".raw");
    const std::vector<Volume3D> loaded = load_dataset(dir.dir());
    REQUIRE(loaded.size() == 3);
    for (int i = 0; i < 3; ++i)
        CHECK(loaded[static_cast<std::size_t>(i)].voxels ==
              data[static_cast<std::size_t>(i)].voxels);

    TempDir empty;
    CHECK_THROWS_AS(load_dataset(empty.dir()), ParameterError);
}
