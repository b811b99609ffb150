#pragma once

#include <array>
#include <cstdint>
#include <variant>
#include <vector>

namespace lsirt {

/// Isotropic voxel grid centered on the origin. Voxel i along an axis with n
/// voxels has its center at (i - (n - 1) / 2) * pitch millimetres.
struct GridSpec {
    int ndim = 2;
    std::array<int, 3> dims{0, 0, 1};  // nx, ny, nz; nz == 1 in 2D
    double pitch = 1.0;                // mm

    std::int64_t n_voxels() const {
        return static_cast<std::int64_t>(dims[0]) * dims[1] * dims[2];
    }
    double half_extent(int axis) const { return 0.5 * dims[axis] * pitch; }
};

GridSpec make_grid_2d(int nx, int ny, double pitch);
GridSpec make_grid_3d(int nx, int ny, int nz, double pitch);

/// 2D parallel beam. At angle theta the detector axis runs along
/// u(theta) = (cos theta, sin theta) and rays point along (-sin theta, cos theta);
/// detector bin i sits at s = (i - (n_det - 1) / 2) * det_pitch on that axis.
struct ParallelGeometry2D {
    int n_angles = 0;
    int n_det = 0;
    double det_pitch = 1.0;      // mm
    std::vector<double> angles;  // radians
};

/// Circular cone beam. At angle beta the source sits at
/// (sad cos beta, sad sin beta, 0); the flat panel is centered on the ray
/// through the origin at distance sdd from the source, with in-plane axes
/// e_u = (-sin beta, cos beta, 0) and e_v = (0, 0, 1).
struct ConeBeamGeometry {
    double sad = 0.0, sdd = 0.0;        // mm
    int det_rows = 0, det_cols = 0;     // rows index v, cols index u
    double det_pitch = 1.0;             // mm, at the physical panel
    std::vector<double> angles;         // radians
};

using Geometry = std::variant<ParallelGeometry2D, ConeBeamGeometry>;

/// n angles evenly spaced on [0, 2*pi).
std::vector<double> full_circle_angles(int n);

ParallelGeometry2D make_parallel_geometry(int n_angles, int n_det, double det_pitch);
ConeBeamGeometry make_cone_geometry(int n_angles, int det_rows, int det_cols,
                                    double det_pitch, double sad, double sdd);

double magnification(const ConeBeamGeometry& g);

/// Throw ConfigError on non-positive counts/pitches, sad >= sdd, or bad angles.
void validate(const ParallelGeometry2D& g);
void validate(const ConeBeamGeometry& g);
void validate(const Geometry& g);
void validate(const GridSpec& g);

int geometry_ndim(const Geometry& g);
int geometry_n_angles(const Geometry& g);
std::int64_t sino_size(const Geometry& g);

/// Signed detector coordinate of bin i out of n, centered panel.
inline double det_coord(int i, int n, double pitch) {
    return (i - 0.5 * (n - 1)) * pitch;
}

}  // namespace lsirt
