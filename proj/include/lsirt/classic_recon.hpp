#pragma once

#include <functional>

#include "lsirt/projector.hpp"
#include "lsirt/volume.hpp"

namespace lsirt {

enum class FilterKind { none, ramp, hann };

struct FilterSpec {
    FilterKind kind = FilterKind::ramp;
    double cutoff = 1.0;  // fraction of Nyquist, in (0, 1]
};

/// Filtered backprojection for 2D parallel data: frequency-domain ramp
/// (optionally Hann-windowed at the relative cutoff), zero-padded to the next
/// power of two >= 2*n_det, backprojected with pi/n_angles weighting.
Volume fbp_2d(const Sinogram& y, const GridSpec& grid, const FilterSpec& f = {});

/// FDK for circular cone-beam data: cosine pre-weighting and row-wise ramp
/// filtering on the virtual detector at the rotation center, then
/// distance-weighted backprojection with pi/n_angles weighting.
Volume fdk_3d(const Sinogram& y, const GridSpec& grid, const FilterSpec& f = {});

struct SirtConfig {
    enum class Variant { fixed_step, scaled };
    Variant variant = Variant::scaled;
    int n_iter = 100;
    double lambda = 0.0;  // fixed_step only; 0 means 1.8 / ||A||^2
};

using SirtCallback = std::function<void(int iter, const Volume& x, double residual_norm)>;

/// Classical SIRT from x = 0: fixed_step iterates x + lambda*A^T(y - Ax),
/// scaled iterates x + C A^T R (y - Ax). Aborts with NumericError when the
/// residual norm grows more than 10x over a 10-iteration window.
Volume sirt(const Sinogram& y, const GridSpec& grid, const SirtConfig& cfg,
            const SirtCallback& callback = nullptr);

}  // namespace lsirt
