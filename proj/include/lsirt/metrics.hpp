#pragma once

#include <array>
#include <vector>

#include "lsirt/volume.hpp"

namespace lsirt::metrics {

/// Region of interest in physical millimetres (grid-centered coordinates).
struct RoiSpec {
    enum class Shape { cylinder, box };
    Shape shape = Shape::cylinder;
    std::array<double, 3> center{0.0, 0.0, 0.0};
    double radius = 0.0;                           // cylinder
    double half_length = 0.0;                      // cylinder, along axis; 0 in 2D
    std::array<double, 3> axis{0.0, 0.0, 1.0};     // cylinder axis
    std::array<double, 3> half_extents{0.0, 0.0, 0.0};  // box
};

/// 10 log10(range^2 / MSE); +inf when the images are identical.
double psnr(const Volume& x, const Volume& ref, double data_range);

/// Mean local SSIM over all fully contained 7-wide (7x7 or 7x7x7) uniform
/// windows, C1 = (0.01 range)^2, C2 = (0.03 range)^2.
double ssim(const Volume& x, const Volume& ref, double data_range = 2.0);

/// |mean_insert - mean_surround| / sqrt(var_insert + var_surround), surround
/// statistics pooled over all listed regions.
double cnr(const Volume& vol, const RoiSpec& insert, const std::vector<RoiSpec>& surround);

struct EdgeFit {
    double mu = 0.0;     // edge radius, mm
    double sigma = 0.0;  // edge spread, mm
    double low = 0.0;    // level inside (r -> 0)
    double high = 0.0;   // level outside (r -> inf)
};

struct FwhmResult {
    EdgeFit fit;
    double fwhm = 0.0;  // 2 sqrt(2 ln 2) sigma, mm
};

/// Radial edge response about `center`: polar resampling at 1 degree / 0.25 mm
/// (bilinear; 3D cylinders pool planes along the axis), angular averaging,
/// then a cumulative-normal least-squares fit (Gauss-Newton, analytic
/// Jacobian, 10%/90%-crossing initialization). Non-convergence raises
/// NumericError carrying the residual.
FwhmResult edge_fwhm(const Volume& vol, const RoiSpec& roi,
                     const std::array<double, 3>& center);

enum class Plane { axial, coronal, sagittal };

struct PlaneImage {
    int w = 0, h = 0;
    std::vector<float> v;  // row-major, w fastest
};

/// log(1 + |DFT|) of one slice, zero frequency centered. Axial fixes z
/// (w = x, h = y), coronal fixes y (w = x, h = z), sagittal fixes x
/// (w = y, h = z).
PlaneImage dft_magnitude_slice(const Volume& vol, Plane plane, int index);

}  // namespace lsirt::metrics
