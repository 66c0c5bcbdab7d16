#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "crfgan/bench.hpp"
#include "crfgan/inference.hpp"
#include "crfgan/metrics.hpp"
#include "crfgan/trainer.hpp"

namespace py = pybind11;
using namespace crfgan;

namespace {

Volume3D volume_from_array(py::array_t<float, py::array::c_style | py::array::forcecast> a) {
    if (a.ndim() != 3) throw ParameterError("volume: expected a 3-D float array");
    Volume3D v;
    v.shape = {static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)),
               static_cast<int>(a.shape(2))};
    v.voxels.assign(a.data(), a.data() + a.size());
    return v;
}

py::array_t<float> volume_to_array(const Volume3D& v) {
    py::array_t<float> a({v.shape[0], v.shape[1], v.shape[2]});
    std::copy(v.voxels.begin(), v.voxels.end(), a.mutable_data());
    return a;
}

std::vector<Volume3D> volumes_from_list(const py::list& arrays) {
    std::vector<Volume3D> out;
    for (const auto& item : arrays)
        out.push_back(volume_from_array(
            py::cast<py::array_t<float, py::array::c_style | py::array::forcecast>>(item)));
    return out;
}

std::vector<double> latent_from_array(
    py::array_t<double, py::array::c_style | py::array::forcecast> z) {
    return std::vector<double>(z.data(), z.data() + z.size());
}

// Opaque handle over a trained (or freshly initialized) model.
struct PyModel {
    TrainState state;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "CRF-guided memory-efficient 3-D GAN core";

    py::register_exception<ParameterError>(m, "ParameterError", PyExc_ValueError);
    py::register_exception<GeometryError>(m, "GeometryError", PyExc_ValueError);
    py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
    py::register_exception<IntegrityError>(m, "IntegrityError", PyExc_RuntimeError);
    py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
    py::register_exception<CapacityError>(m, "CapacityError", PyExc_RuntimeError);

    // ---- volumes and phantoms ------------------------------------------
    m.def(
        "make_phantom",
        [](int size, std::uint64_t seed) {
            PhantomSpec spec;
            spec.shape = {size, size, size};
            spec.seed = seed;
            return volume_to_array(make_phantom(spec));
        },
        py::arg("size"), py::arg("seed") = 0,
        "Procedural ellipsoid phantom volume in [-1, 1], shape (size, size, size).");
    m.def(
        "save_volume",
        [](py::array_t<float, py::array::c_style | py::array::forcecast> a,
           const std::string& path) { save_volume(volume_from_array(a), path); },
        py::arg("volume"), py::arg("path"));
    m.def(
        "load_volume", [](const std::string& path) { return volume_to_array(load_volume(path)); },
        py::arg("path"));

    // ---- configuration ---------------------------------------------------
    py::class_<TrainConfig>(m, "TrainConfig")
        .def(py::init<>())
        .def_property(
            "resolution", [](const TrainConfig& c) { return c.model.resolution; },
            [](TrainConfig& c, int v) { c.model.resolution = v; })
        .def_property(
            "scale", [](const TrainConfig& c) { return c.model.scale; },
            [](TrainConfig& c, int v) { c.model.scale = v; })
        .def_property(
            "sub_extent", [](const TrainConfig& c) { return c.model.sub_extent; },
            [](TrainConfig& c, int v) { c.model.sub_extent = v; })
        .def_property(
            "embed_channels", [](const TrainConfig& c) { return c.model.embed_channels; },
            [](TrainConfig& c, int v) { c.model.embed_channels = v; })
        .def_property(
            "latent_dim", [](const TrainConfig& c) { return c.model.latent_dim; },
            [](TrainConfig& c, int v) { c.model.latent_dim = v; })
        .def_property(
            "d_base_channels", [](const TrainConfig& c) { return c.model.d_base_channels; },
            [](TrainConfig& c, int v) { c.model.d_base_channels = v; })
        .def_property(
            "d_max_channels", [](const TrainConfig& c) { return c.model.d_max_channels; },
            [](TrainConfig& c, int v) { c.model.d_max_channels = v; })
        .def_readwrite("batch_size", &TrainConfig::batch_size)
        .def_readwrite("iterations", &TrainConfig::iterations)
        .def_readwrite("checkpoint_every", &TrainConfig::checkpoint_every)
        .def_readwrite("log_every", &TrainConfig::log_every)
        .def_readwrite("seed", &TrainConfig::seed)
        .def_readwrite("lr_g", &TrainConfig::lr_g)
        .def_readwrite("lr_e", &TrainConfig::lr_e)
        .def_readwrite("lr_d_crf", &TrainConfig::lr_d_crf)
        .def_readwrite("mf_iters", &TrainConfig::mf_iters)
        .def_readwrite("n_max_patches", &TrainConfig::n_max_patches)
        .def("validate", &TrainConfig::validate)
        .def("to_json", &TrainConfig::to_json)
        .def_static("from_json", &TrainConfig::from_json);

    // ---- model handle ------------------------------------------------------
    py::class_<PyModel>(m, "Model")
        .def_property_readonly("iteration", [](const PyModel& m_) { return m_.state.iteration; })
        .def_property_readonly("latent_dim",
                               [](const PyModel& m_) { return m_.state.cfg.model.latent_dim; })
        .def_property_readonly("resolution",
                               [](const PyModel& m_) { return m_.state.cfg.model.resolution; })
        .def(
            "generate",
            [](PyModel& m_, py::array_t<double, py::array::c_style | py::array::forcecast> z,
               bool stitched) {
                const std::vector<double> latent = latent_from_array(z);
                return volume_to_array(stitched ? generate_stitched(m_.state.model, latent)
                                                : generate_full(m_.state.model, latent));
            },
            py::arg("z"), py::arg("stitched") = false)
        .def(
            "reconstruct",
            [](PyModel& m_, py::array_t<float, py::array::c_style | py::array::forcecast> x) {
                return volume_to_array(reconstruct_volume(m_.state.model, volume_from_array(x)));
            },
            py::arg("volume"))
        .def(
            "verify_stitching",
            [](PyModel& m_, py::array_t<double, py::array::c_style | py::array::forcecast> z) {
                const StitchReport r = verify_stitching(m_.state.model, latent_from_array(z));
                py::dict d;
                d["rho_voxels"] = r.rho_voxels;
                d["seams"] = r.seams;
                d["max_interior_diff"] = r.max_interior_diff;
                d["max_boundary_diff"] = r.max_boundary_diff;
                d["max_overall_diff"] = r.max_overall_diff;
                d["band_grad_full"] = r.band_grad_full;
                d["band_grad_stitched"] = r.band_grad_stitched;
                d["interior_voxels"] = r.interior_voxels;
                return d;
            },
            py::arg("z"));

    m.def(
        "init_model",
        [](const TrainConfig& cfg) {
            PyModel m_{TrainState::init(cfg)};
            return m_;
        },
        py::arg("config"), "Freshly initialized (untrained) model.");
    m.def(
        "load_model",
        [](const std::string& checkpoint) {
            PyModel m_{TrainState::from_checkpoint(load_checkpoint(checkpoint))};
            return m_;
        },
        py::arg("checkpoint"));

    // ---- training -----------------------------------------------------------
    m.def(
        "train",
        [](const TrainConfig& cfg, const py::list& volumes, const std::string& out_dir,
           const std::string& resume) {
            const TrainState s = train(cfg, volumes_from_list(volumes), out_dir, resume);
            return PyModel{s};
        },
        py::arg("config"), py::arg("volumes"), py::arg("out_dir"), py::arg("resume") = "",
        "Run the training loop; writes metrics.csv, checkpoints, and samples "
        "under out_dir and returns the final model.");

    // ---- metrics --------------------------------------------------------------
    py::class_<FeatureSet>(m, "FeatureSet")
        .def_property_readonly("count", &FeatureSet::count)
        .def_readonly("feature_dim", &FeatureSet::feature_dim)
        .def_readonly("fingerprint", &FeatureSet::fingerprint);
    m.def(
        "extract_features",
        [](const py::list& volumes, std::uint64_t seed, int feature_dim) {
            return extract_features(volumes_from_list(volumes), seed, feature_dim);
        },
        py::arg("volumes"), py::arg("seed"), py::arg("feature_dim") = 256);
    m.def("fid", &fid, py::arg("a"), py::arg("b"));
    m.def("mmd", &mmd, py::arg("a"), py::arg("b"));

    // ---- bench -----------------------------------------------------------------
    m.def(
        "param_report",
        [](const TrainConfig& cfg, bool include_surrogate) {
            const ParamReport r = param_report(cfg, include_surrogate);
            py::dict d;
            py::dict rows;
            for (const ParamRow& row : r.rows) rows[py::str(row.module)] = row.params;
            d["modules"] = rows;
            d["core_total"] = r.core_total;
            d["surrogate_extra"] = r.surrogate_extra;
            d["total"] = r.total;
            d["reduction_percent"] = r.reduction_percent;
            return d;
        },
        py::arg("config"), py::arg("include_surrogate") = false);
    m.def(
        "estimate_memory",
        [](const TrainConfig& cfg, const std::string& mode) {
            MemoryMode mm;
            if (mode == "sub")
                mm = MemoryMode::SubVolume;
            else if (mode == "full")
                mm = MemoryMode::FullVolume;
            else
                throw ParameterError("estimate_memory: mode must be 'sub' or 'full'");
            const MemoryEstimate e = estimate_activation_memory(cfg, mm);
            py::dict d;
            d["param_bytes"] = e.param_bytes;
            d["moment_bytes"] = e.moment_bytes;
            d["activation_bytes"] = e.activation_bytes;
            d["total_bytes"] = e.total_bytes;
            d["batch"] = e.batch;
            d["mode"] = mode;
            return d;
        },
        py::arg("config"), py::arg("mode") = "sub");
}
