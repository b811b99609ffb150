#pragma once

#include <vector>

#include "lsirt/errors.hpp"
#include "lsirt/geometry.hpp"

namespace lsirt {

/// Grid plus row-major samples: index (ix, iy, iz) lives at (iz*ny + iy)*nx + ix.
struct Volume {
    GridSpec grid;
    std::vector<float> v;
};

inline Volume make_volume(const GridSpec& g) {
    validate(g);
    return Volume{g, std::vector<float>(static_cast<size_t>(g.n_voxels()), 0.0f)};
}

inline std::int64_t vol_index(const GridSpec& g, int ix, int iy, int iz = 0) {
    return (static_cast<std::int64_t>(iz) * g.dims[1] + iy) * g.dims[0] + ix;
}

/// Angle-major projection data. 2D: bin (ia, is) at ia*n_det + is.
/// 3D: bin (ia, row, col) at (ia*det_rows + row)*det_cols + col.
struct Sinogram {
    Geometry geo;
    std::vector<float> v;
};

inline Sinogram make_sinogram(const Geometry& g) {
    validate(g);
    return Sinogram{g, std::vector<float>(static_cast<size_t>(sino_size(g)), 0.0f)};
}

inline void check_same_shape(const Volume& a, const Volume& b, const char* what) {
    if (a.grid.ndim != b.grid.ndim || a.grid.dims != b.grid.dims)
        throw ShapeError(std::string(what) + ": volume shapes differ");
}

}  // namespace lsirt
