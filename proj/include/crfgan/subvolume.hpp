#pragma once

#include "crfgan/rng.hpp"
#include "crfgan/tensor.hpp"
#include "crfgan/volume.hpp"

namespace crfgan {

// Feature grid emitted by the first generator stage / the half-encoder:
// `channels` x (d, h, w), row-major with channel slowest.
struct EmbeddingGrid {
    int channels = 0;
    std::array<int, 3> shape{0, 0, 0};  // d, h, w on the embedding grid
    std::vector<double> data;

    EmbeddingGrid() = default;
    EmbeddingGrid(int c, int d, int h, int w)
        : channels(c), shape{d, h, w}, data(static_cast<std::size_t>(c) * d * h * w, 0.0) {}

    std::int64_t cells() const {
        return static_cast<std::int64_t>(shape[0]) * shape[1] * shape[2];
    }

    Tensor to_tensor() const {
        return Tensor({channels, shape[0], shape[1], shape[2]}, data);
    }
    static EmbeddingGrid from_tensor(const Tensor& t) {
        EmbeddingGrid g(t.shape[0], t.shape[1], t.shape[2], t.shape[3]);
        g.data = t.v;
        return g;
    }
};

// Alignment between the voxel grid and the embedding grid. The sub-volume
// extent `c` lives on the embedding depth axis; the voxel window is c*s deep.
struct GridGeometry {
    std::array<int, 3> full_shape{0, 0, 0};   // voxels (D,H,W)
    std::array<int, 3> embed_shape{0, 0, 0};  // embedding (d,h,w)
    int scale = 0;                            // s = D/d, same on all axes
    int sub_extent = 0;                       // c, in embedding units

    void validate() const;
    int num_offsets() const { return embed_shape[0] - sub_extent + 1; }
};

GridGeometry make_geometry(int resolution, int scale, int sub_extent);

struct SubVolumeSelector {
    int offset = 0;  // r on the embedding depth axis, in [0, d-c]
    GridGeometry geometry;
};

// r ~ uniform over {0, ..., d-c}.
SubVolumeSelector sample_offset(const GridGeometry& g, Rng& rng);
SubVolumeSelector selector_at(const GridGeometry& g, int offset);

// Depth slab [r*s, (r+c)*s) of the voxel grid; full height/width. Copies.
Volume3D extract_voxel_subvolume(const Volume3D& v, const SubVolumeSelector& sel);

// Depth slab [r, r+c) of the embedding grid.
EmbeddingGrid extract_embedding_subset(const EmbeddingGrid& a, const SubVolumeSelector& sel);

}  // namespace crfgan
