#pragma once

#include <vector>

#include "lsirt/geometry.hpp"
#include "lsirt/volume.hpp"

namespace lsirt {

/// Reciprocal row/column sums of the system matrix (Jacobi-style SIRT
/// preconditioners). Rows/columns whose sum is zero get 0, not inf.
struct SirtScaling {
    std::vector<float> row_inv;  // sinogram-shaped
    std::vector<float> col_inv;  // volume-shaped
};

struct SirtScalingD {
    std::vector<double> row_inv, col_inv;
};

/// Joseph forward projection. 2D parallel beam interpolates two pixels per
/// dominant-axis slab with per-slab length pitch/|d_dom|; 3D cone beam
/// integrates trilinear samples at a fixed 0.5*pitch nominal interval along
/// the ray clipped to the grid's outer bounding box. Accumulation is double.
Sinogram forward_project(const Volume& x, const Geometry& geo);

/// Exact adjoint of forward_project: scatters the same weights. Bitwise
/// reproducible at any thread count (fixed angle-striped accumulation).
Volume back_project(const Sinogram& y, const GridSpec& grid);

SirtScaling sirt_scalings(const Geometry& geo, const GridSpec& grid);

/// p = C A^T R (y - A x), the scaled SIRT update direction.
Volume scaled_gradient(const Volume& x, const Sinogram& y, const SirtScaling& sc);

/// Largest singular value squared of A, by power iteration on A^T A.
double op_norm_sq(const Geometry& geo, const GridSpec& grid, int iters = 30,
                  std::uint64_t seed = 0);

// Double-precision mirrors for numerical verification work.
std::vector<double> forward_project_d(const std::vector<double>& x, const GridSpec& grid,
                                      const Geometry& geo);
std::vector<double> back_project_d(const std::vector<double>& y, const GridSpec& grid,
                                   const Geometry& geo);
SirtScalingD sirt_scalings_d(const Geometry& geo, const GridSpec& grid);

}  // namespace lsirt
