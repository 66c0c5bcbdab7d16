// Command-line entry point: phantom | train | generate | reconstruct | eval | bench.
// Exit 0 on success, 1 on usage error, 2 on runtime error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "crfgan/bench.hpp"
#include "crfgan/inference.hpp"
#include "crfgan/metrics.hpp"
#include "crfgan/trainer.hpp"

namespace fs = std::filesystem;
using namespace crfgan;

namespace {

int cmd_phantom(int count, int size, std::uint64_t seed, const std::string& out_dir) {
    fs::create_directories(out_dir);
    PhantomSpec spec;
    spec.shape = {size, size, size};
    for (int i = 0; i < count; ++i) {
        spec.seed = seed + static_cast<std::uint64_t>(i);
        const Volume3D v = make_phantom(spec);
        char name[64];
        std::snprintf(name, sizeof(name), "phantom_%04d.raw", i);
        save_volume(v, out_dir + "/" + name);
    }
    std::cout << "wrote " << count << " phantom volume(s) to " << out_dir << "\n";
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_dir, const std::string& resume) {
    const TrainConfig cfg = TrainConfig::from_json_file(config_path);
    const std::vector<Volume3D> dataset = load_dataset(data_dir);
    TrainCallbacks cb;
    cb.on_log = [](long iter, const LossBundle& b) {
        std::cout << "iter " << iter << "  d_crf " << b.d_and_crf_loss << "  g " << b.g_loss
                  << "  recon " << b.recon_loss << "  d_real " << b.d_real << "  d_fake "
                  << b.d_fake << "  crf_real " << b.crf_real << "  crf_fake " << b.crf_fake
                  << "\n";
    };
    const TrainState s = train(cfg, dataset, out_dir, resume, cb);
    std::cout << "finished at iteration " << s.iteration << "; outputs in " << out_dir << "\n";
    return 0;
}

TrainState state_from_checkpoint_file(const std::string& path) {
    return TrainState::from_checkpoint(load_checkpoint(path));
}

int cmd_generate(const std::string& ckpt, int count, std::uint64_t seed,
                 const std::string& out_dir, bool stitched) {
    TrainState s = state_from_checkpoint_file(ckpt);
    fs::create_directories(out_dir);
    Rng rng(seed);
    for (int i = 0; i < count; ++i) {
        std::vector<double> z(s.cfg.model.latent_dim);
        for (double& x : z) x = rng.normal();
        char name[64];
        std::snprintf(name, sizeof(name), "sample_%04d.raw", i);
        const std::string path = out_dir + "/" + name;
        if (stitched) {
            const Volume3D full = generate_full(s.model, z);
            const Volume3D parts = generate_stitched(s.model, z);
            save_volume(parts, path);
            const StitchReport rep = consistency_report(s.model, full, parts);
            const std::string rep_path = path + ".consistency.txt";
            std::ofstream os(rep_path);
            os << "rho_voxels " << rep.rho_voxels << "\n"
               << "max_interior_diff " << rep.max_interior_diff << "\n"
               << "max_overall_diff " << rep.max_overall_diff << "\n"
               << "interior_voxels " << rep.interior_voxels << "\n";
            std::cout << path << "  consistency report: " << rep_path << "\n";
        } else {
            save_volume(generate_full(s.model, z), path);
            std::cout << path << "\n";
        }
    }
    return 0;
}

int cmd_reconstruct(const std::string& ckpt, const std::string& input, const std::string& out) {
    TrainState s = state_from_checkpoint_file(ckpt);
    const Volume3D x = load_volume(input);
    const Volume3D x_hat = reconstruct_volume(s.model, x);
    save_volume(x_hat, out);
    std::cout << "reconstruction error (mean |diff|): " << reconstruct_loss(x, x_hat) << "\n"
              << out << "\n";
    return 0;
}

int cmd_eval(const std::string& real_dir, const std::string& fake_dir, const std::string& metric,
             std::uint64_t seed) {
    const FeatureSet a = extract_features(load_dataset(real_dir), seed);
    const FeatureSet b = extract_features(load_dataset(fake_dir), seed);
    std::cout << "real set  " << a.count() << " volume(s)\n"
              << "fake set  " << b.count() << " volume(s)\n"
              << "extractor " << a.fingerprint << "\n";
    if (metric == "fid" || metric == "both") std::cout << "fid " << fid(a, b) << "\n";
    if (metric == "mmd" || metric == "both") std::cout << "mmd " << mmd(a, b) << "\n";
    return 0;
}

int cmd_bench(const std::string& config_path, const std::string& what) {
    const TrainConfig cfg =
        config_path.empty() ? TrainConfig{} : TrainConfig::from_json_file(config_path);
    if (what == "params") {
        const ParamReport r = param_report(cfg, true);
        std::cout << format_param_report(r) << "\n" << param_report_csv(r);
    } else if (what == "memory") {
        const MemoryEstimate sub = estimate_activation_memory(cfg, MemoryMode::SubVolume);
        const MemoryEstimate full = estimate_activation_memory(cfg, MemoryMode::FullVolume);
        std::cout << format_memory_estimate(sub) << "\n"
                  << format_memory_estimate(full) << "\n"
                  << memory_estimate_csv(sub) << memory_estimate_csv(full);
    } else {
        const SpeedReport r = measure_speed(cfg, 10);
        std::cout << format_speed_report(r) << "\n" << speed_report_csv(r);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"CRF-guided memory-efficient 3D GAN toolkit"};
    app.require_subcommand(1);

    int count = 10, size = 64;
    std::uint64_t seed = 0;
    std::string out_dir, config_path, data_dir, resume, ckpt, input, out, real_dir, fake_dir;
    std::string metric = "both", what = "params";
    bool stitched = false;

    auto* phantom = app.add_subcommand("phantom", "Generate a synthetic phantom dataset");
    phantom->add_option("--count", count)->check(CLI::PositiveNumber);
    phantom->add_option("--size", size)->check(CLI::PositiveNumber);
    phantom->add_option("--seed", seed);
    phantom->add_option("--out-dir", out_dir)->required();

    auto* train_cmd = app.add_subcommand("train", "Train from a JSON config");
    train_cmd->add_option("--config", config_path)->required()->check(CLI::ExistingFile);
    train_cmd->add_option("--data-dir", data_dir)->required()->check(CLI::ExistingDirectory);
    train_cmd->add_option("--out-dir", out_dir)->required();
    train_cmd->add_option("--resume", resume)->check(CLI::ExistingFile);

    auto* gen = app.add_subcommand("generate", "Sample volumes from a checkpoint");
    gen->add_option("--checkpoint", ckpt)->required()->check(CLI::ExistingFile);
    gen->add_option("--count", count)->check(CLI::PositiveNumber);
    gen->add_option("--seed", seed);
    gen->add_option("--out-dir", out_dir)->required();
    gen->add_flag("--stitched", stitched, "Slab-wise synthesis plus a consistency report");

    auto* rec = app.add_subcommand("reconstruct", "Encode and decode a volume");
    rec->add_option("--checkpoint", ckpt)->required()->check(CLI::ExistingFile);
    rec->add_option("--input", input)->required()->check(CLI::ExistingFile);
    rec->add_option("--out", out)->required();

    auto* ev = app.add_subcommand("eval", "FID/MMD between two volume directories");
    ev->add_option("--real-dir", real_dir)->required()->check(CLI::ExistingDirectory);
    ev->add_option("--fake-dir", fake_dir)->required()->check(CLI::ExistingDirectory);
    ev->add_option("--metric", metric)->check(CLI::IsMember({"fid", "mmd", "both"}));
    ev->add_option("--seed", seed);

    auto* bench = app.add_subcommand("bench", "Parameter/memory/speed reports");
    bench->add_option("--config", config_path)->check(CLI::ExistingFile);
    bench->add_option("--what", what)->check(CLI::IsMember({"params", "memory", "speed"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;  // usage errors -> 1; --help -> 0
    }

    try {
        if (phantom->parsed()) return cmd_phantom(count, size, seed, out_dir);
        if (train_cmd->parsed()) return cmd_train(config_path, data_dir, out_dir, resume);
        if (gen->parsed()) return cmd_generate(ckpt, count, seed, out_dir, stitched);
        if (rec->parsed()) return cmd_reconstruct(ckpt, input, out);
        if (ev->parsed()) return cmd_eval(real_dir, fake_dir, metric, seed);
        if (bench->parsed()) return cmd_bench(config_path, what);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
