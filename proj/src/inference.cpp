#include "crfgan/inference.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>

namespace crfgan {

Volume3D generate_full(const GanModel& m, const std::vector<double>& z) {
    return g2_forward(m, g1_forward(m, z));
}

Volume3D generate_stitched(const GanModel& m, const std::vector<double>& z) {
    const GridGeometry geo = m.cfg.geometry();
    const EmbeddingGrid a = g1_forward(m, z);
    const int c = geo.sub_extent, d = geo.embed_shape[0], s = geo.scale;
    if (d % c != 0) throw GeometryError("generate_stitched: sub-extent must divide depth");
    Volume3D out(geo.full_shape[0], geo.full_shape[1], geo.full_shape[2]);
    const std::int64_t plane =
        static_cast<std::int64_t>(geo.full_shape[1]) * geo.full_shape[2];
    for (int r = 0; r < d; r += c) {
        const Volume3D slab = g2_forward(m, extract_embedding_subset(a, selector_at(geo, r)));
        std::copy(slab.voxels.begin(), slab.voxels.end(),
                  out.voxels.begin() + static_cast<std::int64_t>(r) * s * plane);
    }
    return out;
}

Volume3D reconstruct_volume(const GanModel& m, const Volume3D& x) {
    const GridGeometry geo = m.cfg.geometry();
    if (x.shape != geo.full_shape)
        throw GeometryError("reconstruct_volume: input does not match configured geometry");
    const int c = geo.sub_extent, d = geo.embed_shape[0], s = geo.scale;
    if (d % c != 0) throw GeometryError("reconstruct_volume: sub-extent must divide depth");
    Volume3D out(geo.full_shape[0], geo.full_shape[1], geo.full_shape[2]);
    const std::int64_t plane =
        static_cast<std::int64_t>(geo.full_shape[1]) * geo.full_shape[2];
    for (int r = 0; r < d; r += c) {
        const SubVolumeSelector sel = selector_at(geo, r);
        const Volume3D slab = g2_forward(m, encoder_forward(m, extract_voxel_subvolume(x, sel)));
        std::copy(slab.voxels.begin(), slab.voxels.end(),
                  out.voxels.begin() + static_cast<std::int64_t>(r) * s * plane);
    }
    return out;
}

StitchReport consistency_report(const GanModel& m, const Volume3D& full,
                                const Volume3D& stitched) {
    const GridGeometry geo = m.cfg.geometry();
    if (full.shape != geo.full_shape || stitched.shape != geo.full_shape)
        throw GeometryError("consistency_report: volume shapes do not match geometry");
    StitchReport rep;
    rep.rho_voxels = receptive_field_depth_voxels(m.g2, geo.scale);
    const int c = geo.sub_extent, d = geo.embed_shape[0], s = geo.scale;
    for (int r = c; r < d; r += c) rep.seams.push_back(r * s);

    const std::int64_t plane =
        static_cast<std::int64_t>(geo.full_shape[1]) * geo.full_shape[2];
    const int depth = geo.full_shape[0];
    auto in_band = [&](int z) {
        int dist = depth;  // distance to the nearest interior seam
        for (int seam : rep.seams)
            dist = std::min(dist, z < seam ? seam - 1 - z : z - seam);
        return dist < rep.rho_voxels;
    };
    double grad_full = 0.0, grad_stitched = 0.0;
    std::int64_t grad_count = 0;
    for (int z = 0; z < depth; ++z) {
        const bool band = in_band(z);
        for (std::int64_t i = static_cast<std::int64_t>(z) * plane;
             i < static_cast<std::int64_t>(z + 1) * plane; ++i) {
            const double diff = std::abs(static_cast<double>(full.voxels[i]) -
                                         static_cast<double>(stitched.voxels[i]));
            rep.max_overall_diff = std::max(rep.max_overall_diff, diff);
            if (band) {
                rep.max_boundary_diff = std::max(rep.max_boundary_diff, diff);
                if (z + 1 < depth) {  // depth-gradient proxy within the band
                    grad_full += std::abs(static_cast<double>(full.voxels[i + plane]) -
                                          static_cast<double>(full.voxels[i]));
                    grad_stitched +=
                        std::abs(static_cast<double>(stitched.voxels[i + plane]) -
                                 static_cast<double>(stitched.voxels[i]));
                    ++grad_count;
                }
            } else {
                rep.max_interior_diff = std::max(rep.max_interior_diff, diff);
                ++rep.interior_voxels;
            }
        }
    }
    if (grad_count > 0) {
        rep.band_grad_full = grad_full / static_cast<double>(grad_count);
        rep.band_grad_stitched = grad_stitched / static_cast<double>(grad_count);
    }
    return rep;
}

StitchReport verify_stitching(const GanModel& m, const std::vector<double>& z) {
    return consistency_report(m, generate_full(m, z), generate_stitched(m, z));
}

}  // namespace crfgan
