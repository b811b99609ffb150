#pragma once

#include <cstdint>

#include "lsirt/random.hpp"
#include "lsirt/volume.hpp"

namespace lsirt::phantoms {

/// Six filled triangles, vertices uniform over the image, intensities drawn
/// from Exp(1); overlaps sum and the image is divided by its L2 norm.
Volume triangles(std::uint64_t seed, const GridSpec& grid);

/// Twenty axis-aligned ellipsoids, centers uniform over the volume,
/// per-axis radii from sample_radius (voxel units), intensities N(0, 1).
Volume ellipsoids(std::uint64_t seed, const GridSpec& grid);

/// Radius law used by ellipsoids: |u| with u uniform on [-sqrt(128), +sqrt(128)],
/// so E[r^2] = 128 / 3.
double sample_radius(RandomStream& rng);

/// Ten-ellipse(-oid) head phantom on the grid, high-contrast variant with the
/// outer shell at 2.0. 2D or 3D chosen by grid.ndim.
Volume shepp_logan(const GridSpec& grid);

/// a * exp(-0.002 (x^2 + y^2)) with (x, y) in mm from the center, with voxels
/// whose centers fall strictly inside the open square (0, s) x (0, s) mm
/// zeroed, s = floor(min_dim / 4) * pitch.
Volume gaussian_square(double amplitude, const GridSpec& grid);

/// s + iid zero-mean Gaussian with the given variance; per-bin counter
/// addressing makes the result independent of evaluation order.
Sinogram add_noise(const Sinogram& s, double variance, std::uint64_t seed);

}  // namespace lsirt::phantoms
