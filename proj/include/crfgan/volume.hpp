#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "crfgan/rng.hpp"

namespace crfgan {

struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct IntegrityError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ParameterError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct GeometryError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Single-channel voxel grid, row-major (depth, height, width), width fastest.
// Intensities are normalized to [-1, 1].
struct Volume3D {
    std::array<int, 3> shape{0, 0, 0};  // depth, height, width
    std::vector<float> voxels;

    Volume3D() = default;
    Volume3D(int d, int h, int w)
        : shape{d, h, w}, voxels(static_cast<std::size_t>(d) * h * w, 0.0f) {}

    std::int64_t size() const {
        return static_cast<std::int64_t>(shape[0]) * shape[1] * shape[2];
    }
    float& at(int z, int y, int x) {
        return voxels[(static_cast<std::int64_t>(z) * shape[1] + y) * shape[2] + x];
    }
    float at(int z, int y, int x) const {
        return voxels[(static_cast<std::int64_t>(z) * shape[1] + y) * shape[2] + x];
    }
};

struct VolumeMeta {
    std::array<int, 3> shape{0, 0, 0};
    std::string dtype = "float32";
    std::string byte_order = "little-endian";
    std::string layout = "row-major";
    std::array<double, 2> intensity_range{-1.0, 1.0};
};

struct Ellipsoid {
    std::array<double, 3> center;  // voxel coordinates (z, y, x)
    std::array<double, 3> radii;
    double intensity;
};

struct PhantomSpec {
    int num_ellipsoids = 4;
    std::array<int, 3> shape{64, 64, 64};
    double radius_min = 0.08;  // fraction of the smallest volume extent
    double radius_max = 0.25;
    std::vector<double> intensity_levels{-0.2, 0.3, 0.8};
    double background = -1.0;
    std::uint64_t seed = 0;
};

// Raw little-endian float32 file plus a `<path>.meta.json` sidecar.
void save_volume(const Volume3D& v, const std::string& path);
Volume3D load_volume(const std::string& path);
VolumeMeta read_meta(const std::string& path);

// Affine map [lo,hi] -> [-1,1]; out-of-range values clamp to the endpoints.
Volume3D normalize_intensity(const std::vector<float>& raw, std::array<int, 3> shape,
                             float lo, float hi);

// Seeded anti-aliased ellipsoid phantom. If `out_ellipsoids` is non-null the
// drawn geometry is reported (used by the distribution tests).
Volume3D make_phantom(const PhantomSpec& spec, std::vector<Ellipsoid>* out_ellipsoids = nullptr);

}  // namespace crfgan
