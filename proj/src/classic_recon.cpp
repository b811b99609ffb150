#include "lsirt/classic_recon.hpp"

#include <cmath>
#include <complex>
#include <deque>

#include "lsirt/errors.hpp"
#include "lsirt/fft.hpp"
#include "lsirt/parallel.hpp"

namespace lsirt {
namespace {

constexpr double kPi = 3.14159265358979323846;

void check_filter(const FilterSpec& f) {
    if (!(f.cutoff > 0.0) || f.cutoff > 1.0)
        throw ConfigError("filter cutoff must lie in (0, 1]");
}

// Frequency response of the band-limited ramp on n_pad samples at pitch tau,
// built from the sampled spatial kernel (Ram-Lak) so the DC term is handled
// correctly, windowed per FilterSpec, with the tau convolution factor folded in.
std::vector<double> make_filter(std::size_t n_pad, double tau, const FilterSpec& f) {
    std::vector<std::complex<double>> h(n_pad, 0.0);
    h[0] = 1.0 / (4.0 * tau * tau);
    for (std::size_t k = 1; k < n_pad / 2; ++k) {
        if (k % 2 == 1) {
            const double v = -1.0 / (kPi * kPi * k * k * tau * tau);
            h[k] = v;
            h[n_pad - k] = v;
        }
    }
    fft_pow2(h, false);
    std::vector<double> H(n_pad);
    for (std::size_t k = 0; k < n_pad; ++k) {
        const double fk = (k <= n_pad / 2 ? static_cast<double>(k)
                                          : static_cast<double>(k) - static_cast<double>(n_pad)) /
                          static_cast<double>(n_pad);
        const double rel = std::abs(fk) / 0.5;
        double w = 0.0;
        if (rel <= f.cutoff)
            w = f.kind == FilterKind::hann ? 0.5 * (1.0 + std::cos(kPi * rel / f.cutoff)) : 1.0;
        H[k] = h[k].real() * w * tau;
    }
    return H;
}

// Filter one detector row of length n into q (length n), through the padded
// frequency domain.
void filter_row(const float* p, int n, const std::vector<double>& H, double* q) {
    const std::size_t n_pad = H.size();
    std::vector<std::complex<double>> buf(n_pad, 0.0);
    for (int i = 0; i < n; ++i) buf[i] = p[i];
    fft_pow2(buf, false);
    for (std::size_t k = 0; k < n_pad; ++k) buf[k] *= H[k];
    fft_pow2(buf, true);
    for (int i = 0; i < n; ++i) q[i] = buf[i].real();
}

inline double interp1(const double* q, int n, double idx) {
    if (idx <= 0.0 || idx >= n - 1) {
        // clamp the exact endpoints, drop anything outside
        if (idx == 0.0) return q[0];
        if (idx == static_cast<double>(n - 1)) return q[n - 1];
        return 0.0;
    }
    const int i = static_cast<int>(idx);
    const double f = idx - i;
    return q[i] * (1.0 - f) + q[i + 1] * f;
}

}  // namespace

Volume fbp_2d(const Sinogram& y, const GridSpec& grid, const FilterSpec& f) {
    check_filter(f);
    validate(grid);
    const auto* geo = std::get_if<ParallelGeometry2D>(&y.geo);
    if (!geo || grid.ndim != 2) throw ShapeError("fbp_2d: needs 2D parallel data and a 2D grid");
    validate(*geo);

    const int n_det = geo->n_det, n_angles = geo->n_angles;
    const double tau = geo->det_pitch;

    std::vector<double> q(static_cast<std::size_t>(n_angles) * n_det);
    if (f.kind == FilterKind::none) {
        for (std::size_t i = 0; i < q.size(); ++i) q[i] = y.v[i];
    } else {
        const std::vector<double> H = make_filter(next_pow2(2 * static_cast<std::size_t>(n_det)), tau, f);
        parallel_for(n_angles, [&](std::int64_t b, std::int64_t e) {
            for (std::int64_t a = b; a < e; ++a)
                filter_row(y.v.data() + a * n_det, n_det, H, q.data() + a * n_det);
        });
    }

    std::vector<double> ct(geo->angles.size()), st(geo->angles.size());
    for (std::size_t a = 0; a < geo->angles.size(); ++a) {
        ct[a] = std::cos(geo->angles[a]);
        st[a] = std::sin(geo->angles[a]);
    }

    Volume out = make_volume(grid);
    const int nx = grid.dims[0], ny = grid.dims[1];
    const double w_ang = kPi / n_angles;
    parallel_for(ny, [&](std::int64_t b, std::int64_t e) {
        for (std::int64_t iy = b; iy < e; ++iy) {
            const double py = (iy - 0.5 * (ny - 1)) * grid.pitch;
            for (int ix = 0; ix < nx; ++ix) {
                const double px = (ix - 0.5 * (nx - 1)) * grid.pitch;
                double acc = 0.0;
                for (int a = 0; a < n_angles; ++a) {
                    const double s = px * ct[a] + py * st[a];
                    acc += interp1(q.data() + static_cast<std::int64_t>(a) * n_det, n_det,
                                   s / tau + 0.5 * (n_det - 1));
                }
                out.v[iy * nx + ix] = static_cast<float>(acc * w_ang);
            }
        }
    });
    return out;
}

Volume fdk_3d(const Sinogram& y, const GridSpec& grid, const FilterSpec& f) {
    check_filter(f);
    validate(grid);
    const auto* geo = std::get_if<ConeBeamGeometry>(&y.geo);
    if (!geo || grid.ndim != 3) throw ShapeError("fdk_3d: needs cone-beam data and a 3D grid");
    validate(*geo);

    const int rows = geo->det_rows, cols = geo->det_cols;
    const int n_angles = static_cast<int>(geo->angles.size());
    const double sad = geo->sad;
    // everything happens on the virtual detector through the rotation center
    const double tau = geo->det_pitch * sad / geo->sdd;
    const std::vector<double> H =
        f.kind == FilterKind::none
            ? std::vector<double>()
            : make_filter(next_pow2(2 * static_cast<std::size_t>(cols)), tau, f);

    Volume out = make_volume(grid);
    const int nx = grid.dims[0], ny = grid.dims[1], nz = grid.dims[2];
    const double w_ang = kPi / n_angles;
    std::vector<double> q(static_cast<std::size_t>(rows) * cols);

    for (int a = 0; a < n_angles; ++a) {
        const double cb = std::cos(geo->angles[a]), sb = std::sin(geo->angles[a]);
        const float* proj = y.v.data() + static_cast<std::int64_t>(a) * rows * cols;
        parallel_for(rows, [&](std::int64_t rb, std::int64_t re) {
            for (std::int64_t r = rb; r < re; ++r) {
                const double v = det_coord(static_cast<int>(r), rows, tau);
                std::vector<float> row(cols);
                for (int c = 0; c < cols; ++c) {
                    const double u = det_coord(c, cols, tau);
                    row[c] = static_cast<float>(proj[r * cols + c] * sad /
                                                std::sqrt(sad * sad + u * u + v * v));
                }
                if (H.empty()) {
                    for (int c = 0; c < cols; ++c) q[r * cols + c] = row[c];
                } else {
                    filter_row(row.data(), cols, H, q.data() + r * cols);
                }
            }
        });

        parallel_for(static_cast<std::int64_t>(nz) * ny, [&](std::int64_t b, std::int64_t e) {
            for (std::int64_t rix = b; rix < e; ++rix) {
                const int iz = static_cast<int>(rix / ny), iy = static_cast<int>(rix % ny);
                const double pz = (iz - 0.5 * (nz - 1)) * grid.pitch;
                const double py = (iy - 0.5 * (ny - 1)) * grid.pitch;
                float* vrow = out.v.data() + rix * nx;
                for (int ix = 0; ix < nx; ++ix) {
                    const double px = (ix - 0.5 * (nx - 1)) * grid.pitch;
                    const double U = sad - (px * cb + py * sb);
                    if (U <= 1e-6 * sad) continue;
                    const double uu = sad * (-px * sb + py * cb) / U;
                    const double vv = sad * pz / U;
                    const double ci = uu / tau + 0.5 * (cols - 1);
                    const double ri = vv / tau + 0.5 * (rows - 1);
                    if (ci < 0.0 || ci > cols - 1 || ri < 0.0 || ri > rows - 1) continue;
                    const int c0 = std::min(static_cast<int>(ci), cols - 2);
                    const int r0 = std::min(static_cast<int>(ri), rows - 2);
                    const double fc = ci - c0, fr = ri - r0;
                    const double* qr = q.data() + static_cast<std::size_t>(r0) * cols + c0;
                    const double val = (qr[0] * (1.0 - fc) + qr[1] * fc) * (1.0 - fr) +
                                       (qr[cols] * (1.0 - fc) + qr[cols + 1] * fc) * fr;
                    vrow[ix] += static_cast<float>(w_ang * val * (sad / U) * (sad / U));
                }
            }
        });
    }
    return out;
}

Volume sirt(const Sinogram& y, const GridSpec& grid, const SirtConfig& cfg,
            const SirtCallback& callback) {
    if (cfg.n_iter < 1) throw ConfigError("sirt: n_iter must be >= 1");
    if (cfg.lambda < 0.0) throw ConfigError("sirt: lambda must be positive");
    validate(grid);
    validate(y.geo);
    if (grid.ndim != geometry_ndim(y.geo))
        throw ShapeError("sirt: grid dimensionality does not match geometry");

    const bool scaled = cfg.variant == SirtConfig::Variant::scaled;
    SirtScaling sc;
    double lambda = cfg.lambda;
    if (scaled) {
        sc = sirt_scalings(y.geo, grid);
    } else if (lambda == 0.0) {
        lambda = 1.8 / op_norm_sq(y.geo, grid);
    }

    Volume x = make_volume(grid);
    const std::int64_t n_ray = sino_size(y.geo);
    const std::int64_t n_vox = grid.n_voxels();
    std::deque<double> window;

    for (int it = 0; it < cfg.n_iter; ++it) {
        Sinogram r = forward_project(x, y.geo);
        double norm_sq = 0.0;
        for (std::int64_t i = 0; i < n_ray; ++i) {
            r.v[i] = y.v[i] - r.v[i];
            norm_sq += static_cast<double>(r.v[i]) * r.v[i];
        }
        const double rnorm = std::sqrt(norm_sq);
        if (!std::isfinite(rnorm))
            throw NumericError("sirt: non-finite residual at iteration " + std::to_string(it));
        window.push_back(rnorm);
        if (window.size() > 10) {
            const double old = window.front();
            window.pop_front();
            if (rnorm > 10.0 * old)
                throw NumericError("sirt diverged: residual grew from " + std::to_string(old) +
                                   " to " + std::to_string(rnorm) +
                                   " in 10 iterations (step size too large?)");
        }

        if (scaled) {
            parallel_for(n_ray, [&](std::int64_t b, std::int64_t e) {
                for (std::int64_t i = b; i < e; ++i) r.v[i] = r.v[i] * sc.row_inv[i];
            });
            Volume g = back_project(r, grid);
            parallel_for(n_vox, [&](std::int64_t b, std::int64_t e) {
                for (std::int64_t j = b; j < e; ++j) {
                    g.v[j] *= sc.col_inv[j];
                    x.v[j] = x.v[j] + g.v[j];
                }
            });
        } else {
            Volume g = back_project(r, grid);
            const float lf = static_cast<float>(lambda);
            parallel_for(n_vox, [&](std::int64_t b, std::int64_t e) {
                for (std::int64_t j = b; j < e; ++j) x.v[j] += lf * g.v[j];
            });
        }
        if (callback) callback(it + 1, x, rnorm);
    }
    return x;
}

}  // namespace lsirt
