#pragma once

#include <string>
#include <vector>

#include "crfgan/netspec.hpp"
#include "crfgan/subvolume.hpp"

namespace crfgan {

// Whole-volume synthesis: A = G1(z), X = G2(A) in one pass.
Volume3D generate_full(const GanModel& m, const std::vector<double>& z);

// Memory-bounded synthesis: G2 runs on depth slabs of the embedding and the
// voxel slabs are written into place. Same z gives the same volume as
// generate_full away from slab seams.
Volume3D generate_stitched(const GanModel& m, const std::vector<double>& z);

// Encode X, decode the embedding slab-wise: X_hat = G2(E(X)).
Volume3D reconstruct_volume(const GanModel& m, const Volume3D& x);

struct StitchReport {
    int rho_voxels = 0;             // G2 depth receptive-field radius, voxels
    std::vector<int> seams;         // interior slab boundaries, voxel depth index
    double max_interior_diff = 0.0; // outside the +/- rho band around each seam
    double max_boundary_diff = 0.0; // inside the bands
    double max_overall_diff = 0.0;
    // Seam-artifact proxy: mean |d/dz| within the bands for each volume.
    double band_grad_full = 0.0;
    double band_grad_stitched = 0.0;
    std::int64_t interior_voxels = 0;
};

// Voxel-wise comparison of a full pass against a stitched pass.
StitchReport consistency_report(const GanModel& m, const Volume3D& full,
                                const Volume3D& stitched);

// Convenience: run both passes from one latent and compare.
StitchReport verify_stitching(const GanModel& m, const std::vector<double>& z);

}  // namespace crfgan
