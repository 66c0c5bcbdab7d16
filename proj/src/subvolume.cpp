#include "crfgan/subvolume.hpp"

#include <algorithm>
#include <string>

namespace crfgan {

void GridGeometry::validate() const {
    if (scale < 2) throw GeometryError("geometry: scale factor must be >= 2");
    for (int a = 0; a < 3; ++a) {
        if (embed_shape[a] < 1 || full_shape[a] != scale * embed_shape[a])
            throw GeometryError("geometry: full shape must be scale * embedding shape");
    }
    if (sub_extent < 1 || sub_extent > embed_shape[0])
        throw GeometryError("geometry: sub-extent must be in [1, d]");
}

GridGeometry make_geometry(int resolution, int scale, int sub_extent) {
    if (resolution % scale != 0)
        throw GeometryError("geometry: resolution not divisible by scale");
    GridGeometry g;
    g.full_shape = {resolution, resolution, resolution};
    const int d = resolution / scale;
    g.embed_shape = {d, d, d};
    g.scale = scale;
    g.sub_extent = sub_extent > 0 ? sub_extent : std::max(1, d / 4);
    g.validate();
    return g;
}

SubVolumeSelector sample_offset(const GridGeometry& g, Rng& rng) {
    g.validate();
    SubVolumeSelector sel;
    sel.geometry = g;
    sel.offset = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(g.num_offsets())));
    return sel;
}

SubVolumeSelector selector_at(const GridGeometry& g, int offset) {
    g.validate();
    if (offset < 0 || offset > g.embed_shape[0] - g.sub_extent)
        throw GeometryError("selector: offset out of range");
    return SubVolumeSelector{offset, g};
}

Volume3D extract_voxel_subvolume(const Volume3D& v, const SubVolumeSelector& sel) {
    const GridGeometry& g = sel.geometry;
    g.validate();
    if (v.shape != g.full_shape)
        throw GeometryError("extract_voxel_subvolume: volume shape does not match geometry");
    const int z0 = sel.offset * g.scale;
    const int depth = g.sub_extent * g.scale;
    Volume3D out(depth, v.shape[1], v.shape[2]);
    const std::int64_t plane = static_cast<std::int64_t>(v.shape[1]) * v.shape[2];
    std::copy_n(v.voxels.begin() + static_cast<std::int64_t>(z0) * plane, depth * plane,
                out.voxels.begin());
    return out;
}

EmbeddingGrid extract_embedding_subset(const EmbeddingGrid& a, const SubVolumeSelector& sel) {
    const GridGeometry& g = sel.geometry;
    g.validate();
    if (a.shape != g.embed_shape)
        throw GeometryError("extract_embedding_subset: embedding shape does not match geometry");
    EmbeddingGrid out(a.channels, g.sub_extent, a.shape[1], a.shape[2]);
    const std::int64_t plane = static_cast<std::int64_t>(a.shape[1]) * a.shape[2];
    const std::int64_t in_chan = static_cast<std::int64_t>(a.shape[0]) * plane;
    const std::int64_t out_chan = static_cast<std::int64_t>(g.sub_extent) * plane;
    for (int c = 0; c < a.channels; ++c)
        std::copy_n(a.data.begin() + c * in_chan + static_cast<std::int64_t>(sel.offset) * plane,
                    out_chan, out.data.begin() + c * out_chan);
    return out;
}

}  // namespace crfgan
