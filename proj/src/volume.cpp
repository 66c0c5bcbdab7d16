#include "crfgan/volume.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace crfgan {

namespace {

std::string meta_path(const std::string& path) { return path + ".meta.json"; }

static_assert(sizeof(float) == 4, "float32 expected");

bool host_is_little_endian() {
    const std::uint32_t one = 1;
    return *reinterpret_cast<const unsigned char*>(&one) == 1;
}

void byteswap_floats(std::vector<float>& v) {
    for (float& f : v) {
        std::uint32_t u;
        std::memcpy(&u, &f, 4);
        u = __builtin_bswap32(u);
        std::memcpy(&f, &u, 4);
    }
}

}  // namespace

void save_volume(const Volume3D& v, const std::string& path) {
    std::ofstream raw(path, std::ios::binary);
    if (!raw) throw FormatError("cannot open for write: " + path);
    std::vector<float> data = v.voxels;
    if (!host_is_little_endian()) byteswap_floats(data);
    raw.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size() * 4));
    if (!raw) throw FormatError("write failed: " + path);
    raw.close();

    nlohmann::json meta = {
        {"shape", {v.shape[0], v.shape[1], v.shape[2]}},
        {"dtype", "float32"},
        {"byte_order", "little-endian"},
        {"layout", "row-major"},
        {"intensity_range", {-1.0, 1.0}},
    };
    std::ofstream m(meta_path(path));
    if (!m) throw FormatError("cannot open for write: " + meta_path(path));
    m << meta.dump(2) << "\n";
}

VolumeMeta read_meta(const std::string& path) {
    std::ifstream m(meta_path(path));
    if (!m) throw FormatError("missing sidecar: " + meta_path(path));
    nlohmann::json j;
    try {
        m >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("corrupt sidecar: " + meta_path(path) + ": " + e.what());
    }
    VolumeMeta meta;
    try {
        auto s = j.at("shape");
        meta.shape = {s.at(0).get<int>(), s.at(1).get<int>(), s.at(2).get<int>()};
        meta.dtype = j.at("dtype").get<std::string>();
        meta.byte_order = j.at("byte_order").get<std::string>();
        meta.layout = j.at("layout").get<std::string>();
        auto r = j.at("intensity_range");
        meta.intensity_range = {r.at(0).get<double>(), r.at(1).get<double>()};
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("corrupt sidecar: " + meta_path(path) + ": " + e.what());
    }
    if (meta.dtype != "float32" || meta.byte_order != "little-endian" ||
        meta.layout != "row-major")
        throw FormatError("unsupported format tags in " + meta_path(path));
    if (meta.shape[0] <= 0 || meta.shape[1] <= 0 || meta.shape[2] <= 0)
        throw FormatError("non-positive shape in " + meta_path(path));
    return meta;
}

Volume3D load_volume(const std::string& path) {
    const VolumeMeta meta = read_meta(path);
    std::ifstream raw(path, std::ios::binary | std::ios::ate);
    if (!raw) throw FormatError("missing raw file: " + path);
    const std::int64_t bytes = raw.tellg();
    const std::int64_t expected =
        static_cast<std::int64_t>(meta.shape[0]) * meta.shape[1] * meta.shape[2] * 4;
    if (bytes != expected)
        throw IntegrityError("byte-length mismatch for " + path + ": file has " +
                             std::to_string(bytes) + " bytes, sidecar implies " +
                             std::to_string(expected));
    raw.seekg(0);
    Volume3D v(meta.shape[0], meta.shape[1], meta.shape[2]);
    raw.read(reinterpret_cast<char*>(v.voxels.data()), expected);
    if (!raw) throw IntegrityError("short read: " + path);
    if (!host_is_little_endian()) byteswap_floats(v.voxels);
    return v;
}

Volume3D normalize_intensity(const std::vector<float>& raw, std::array<int, 3> shape,
                             float lo, float hi) {
    if (!(lo < hi)) throw ParameterError("normalize_intensity: lo must be < hi");
    const std::int64_t n = static_cast<std::int64_t>(shape[0]) * shape[1] * shape[2];
    if (static_cast<std::int64_t>(raw.size()) != n)
        throw ParameterError("normalize_intensity: size does not match shape");
    Volume3D v(shape[0], shape[1], shape[2]);
    const float scale = 2.0f / (hi - lo);
    for (std::int64_t i = 0; i < n; ++i) {
        const float clipped = std::min(hi, std::max(lo, raw[i]));
        v.voxels[i] = (clipped - lo) * scale - 1.0f;
    }
    return v;
}

Volume3D make_phantom(const PhantomSpec& spec, std::vector<Ellipsoid>* out_ellipsoids) {
    if (spec.num_ellipsoids < 1) throw ParameterError("phantom: need at least one ellipsoid");
    if (spec.radius_min < 0.0 || spec.radius_max < spec.radius_min)
        throw ParameterError("phantom: bad radius range");
    if (spec.intensity_levels.empty()) throw ParameterError("phantom: no intensity levels");
    const int min_extent = std::min({spec.shape[0], spec.shape[1], spec.shape[2]});
    if (spec.radius_max * min_extent > min_extent)
        throw ParameterError("phantom: radii exceed volume extent");

    Rng rng(spec.seed);
    Volume3D v(spec.shape[0], spec.shape[1], spec.shape[2]);
    std::fill(v.voxels.begin(), v.voxels.end(), static_cast<float>(spec.background));

    std::vector<Ellipsoid> ells;
    for (int e = 0; e < spec.num_ellipsoids; ++e) {
        Ellipsoid el;
        for (int a = 0; a < 3; ++a) el.center[a] = rng.uniform() * spec.shape[a];
        for (int a = 0; a < 3; ++a)
            el.radii[a] = rng.uniform(spec.radius_min, spec.radius_max) * min_extent;
        el.intensity =
            spec.intensity_levels[rng.uniform_int(spec.intensity_levels.size())];
        ells.push_back(el);
    }

    // Paint back-to-front; each ellipsoid blends in with a one-voxel linear
    // edge so the surfaces are smooth at grid resolution.
    for (const Ellipsoid& el : ells) {
        if (el.radii[0] <= 0.0 || el.radii[1] <= 0.0 || el.radii[2] <= 0.0) continue;
        const int z0 = std::max(0, static_cast<int>(std::floor(el.center[0] - el.radii[0] - 2)));
        const int z1 = std::min(spec.shape[0] - 1,
                                static_cast<int>(std::ceil(el.center[0] + el.radii[0] + 2)));
        const int y0 = std::max(0, static_cast<int>(std::floor(el.center[1] - el.radii[1] - 2)));
        const int y1 = std::min(spec.shape[1] - 1,
                                static_cast<int>(std::ceil(el.center[1] + el.radii[1] + 2)));
        const int x0 = std::max(0, static_cast<int>(std::floor(el.center[2] - el.radii[2] - 2)));
        const int x1 = std::min(spec.shape[2] - 1,
                                static_cast<int>(std::ceil(el.center[2] + el.radii[2] + 2)));
        const double rmin = std::min({el.radii[0], el.radii[1], el.radii[2]});
        for (int z = z0; z <= z1; ++z)
            for (int y = y0; y <= y1; ++y)
                for (int x = x0; x <= x1; ++x) {
                    const double dz = (z + 0.5 - el.center[0]) / el.radii[0];
                    const double dy = (y + 0.5 - el.center[1]) / el.radii[1];
                    const double dx = (x + 0.5 - el.center[2]) / el.radii[2];
                    const double rho = std::sqrt(dz * dz + dy * dy + dx * dx);
                    // Signed distance from the surface, approximated in
                    // voxels via the smallest radius.
                    const double dist = (rho - 1.0) * rmin;
                    double alpha;
                    if (dist <= -0.5)
                        alpha = 1.0;
                    else if (dist >= 0.5)
                        alpha = 0.0;
                    else
                        alpha = 0.5 - dist;
                    if (alpha > 0.0) {
                        float& dst = v.at(z, y, x);
                        dst = static_cast<float>(alpha * el.intensity + (1.0 - alpha) * dst);
                    }
                }
    }
    for (float& f : v.voxels) f = std::min(1.0f, std::max(-1.0f, f));
    if (out_ellipsoids) *out_ellipsoids = std::move(ells);
    return v;
}

}  // namespace crfgan
