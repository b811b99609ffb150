#include "lsirt/projector.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>

#include "lsirt/errors.hpp"
#include "lsirt/parallel.hpp"
#include "lsirt/random.hpp"

namespace lsirt {
namespace {

// ---------------------------------------------------------------------------
// 2D parallel beam: dominant-axis Joseph with 2-tap linear interpolation.
// Ray at angle theta, detector offset s: origin s*(cos t, sin t), direction
// (-sin t, cos t). Per-slab weight pitch / |d_dom|.
// ---------------------------------------------------------------------------
template <class F>
inline void trace_parallel_2d(const GridSpec& g, double cos_t, double sin_t, double s, F&& cb) {
    const int nx = g.dims[0], ny = g.dims[1];
    const double p = g.pitch;
    const double cx = 0.5 * (nx - 1), cy = 0.5 * (ny - 1);
    const double ox = s * cos_t, oy = s * sin_t;
    const double dx = -sin_t, dy = cos_t;

    if (std::abs(dy) >= std::abs(dx)) {
        const double w_ray = p / std::abs(dy);
        const double slope = dx / dy;
        for (int iy = 0; iy < ny; ++iy) {
            const double y = (iy - cy) * p;
            const double x = ox + (y - oy) * slope;
            const double fx = x / p + cx;
            const double f0 = std::floor(fx);
            const int ix0 = static_cast<int>(f0);
            const double w1 = fx - f0;
            if (ix0 >= 0 && ix0 < nx) cb(static_cast<std::int64_t>(iy) * nx + ix0, (1.0 - w1) * w_ray);
            if (ix0 + 1 >= 0 && ix0 + 1 < nx) cb(static_cast<std::int64_t>(iy) * nx + ix0 + 1, w1 * w_ray);
        }
    } else {
        const double w_ray = p / std::abs(dx);
        const double slope = dy / dx;
        for (int ix = 0; ix < nx; ++ix) {
            const double x = (ix - cx) * p;
            const double y = oy + (x - ox) * slope;
            const double fy = y / p + cy;
            const double f0 = std::floor(fy);
            const int iy0 = static_cast<int>(f0);
            const double w1 = fy - f0;
            if (iy0 >= 0 && iy0 < ny) cb(static_cast<std::int64_t>(iy0) * nx + ix, (1.0 - w1) * w_ray);
            if (iy0 + 1 >= 0 && iy0 + 1 < ny) cb(static_cast<std::int64_t>(iy0 + 1) * nx + ix, w1 * w_ray);
        }
    }
}

// ---------------------------------------------------------------------------
// 3D cone beam: midpoint sampling at a nominal 0.5*pitch interval along the
// ray clipped to the grid's outer bounding box, trilinear taps, each sample
// weighted by the effective interval.
// ---------------------------------------------------------------------------
struct ConeFrame {
    double sx, sy, sz;     // source
    double cxr, cyr, czr;  // unit central ray (source -> origin)
    double eux, euy, euz;  // detector u axis
    // v axis is +z
};

inline ConeFrame cone_frame(const ConeBeamGeometry& g, double beta) {
    const double c = std::cos(beta), s = std::sin(beta);
    ConeFrame f;
    f.sx = g.sad * c;
    f.sy = g.sad * s;
    f.sz = 0.0;
    f.cxr = -c;
    f.cyr = -s;
    f.czr = 0.0;
    f.eux = -s;
    f.euy = c;
    f.euz = 0.0;
    return f;
}

// Clip t of S + t*dir to the slab [-h, h]; false when the intersection dies.
inline bool clip_axis(double s0, double d, double h, double& t0, double& t1) {
    if (d == 0.0) return std::abs(s0) <= h;
    const double inv = 1.0 / d;
    double a = (-h - s0) * inv, b = (h - s0) * inv;
    if (a > b) std::swap(a, b);
    t0 = std::max(t0, a);
    t1 = std::min(t1, b);
    return t0 < t1;
}

template <class F>
inline void trace_cone_3d(const GridSpec& g, const ConeBeamGeometry& geo, const ConeFrame& f,
                          double u, double v, F&& cb) {
    const int nx = g.dims[0], ny = g.dims[1], nz = g.dims[2];
    const double p = g.pitch;
    const double cx = 0.5 * (nx - 1), cy = 0.5 * (ny - 1), cz = 0.5 * (nz - 1);

    const double px = f.sx + geo.sdd * f.cxr + u * f.eux;
    const double py = f.sy + geo.sdd * f.cyr + u * f.euy;
    const double pz = f.sz + v;
    double dx = px - f.sx, dy = py - f.sy, dz = pz - f.sz;
    const double len = std::sqrt(dx * dx + dy * dy + dz * dz);
    dx /= len;
    dy /= len;
    dz /= len;

    double t0 = -1e300, t1 = 1e300;
    if (!clip_axis(f.sx, dx, 0.5 * nx * p, t0, t1)) return;
    if (!clip_axis(f.sy, dy, 0.5 * ny * p, t0, t1)) return;
    if (!clip_axis(f.sz, dz, 0.5 * nz * p, t0, t1)) return;
    if (!(t1 > t0)) return;

    const int n = static_cast<int>(std::ceil((t1 - t0) / (0.5 * p)));
    const double dt = (t1 - t0) / n;
    const std::int64_t sxy = static_cast<std::int64_t>(nx) * ny;

    for (int k = 0; k < n; ++k) {
        const double t = t0 + (k + 0.5) * dt;
        const double fx = (f.sx + t * dx) / p + cx;
        const double fy = (f.sy + t * dy) / p + cy;
        const double fz = (f.sz + t * dz) / p + cz;
        const double gx = std::floor(fx), gy = std::floor(fy), gz = std::floor(fz);
        const int ix = static_cast<int>(gx), iy = static_cast<int>(gy), iz = static_cast<int>(gz);
        const double wx1 = fx - gx, wy1 = fy - gy, wz1 = fz - gz;
        const double wx0 = 1.0 - wx1, wy0 = 1.0 - wy1, wz0 = 1.0 - wz1;

        const bool x0 = ix >= 0 && ix < nx, x1 = ix + 1 >= 0 && ix + 1 < nx;
        const bool y0 = iy >= 0 && iy < ny, y1 = iy + 1 >= 0 && iy + 1 < ny;
        const bool z0 = iz >= 0 && iz < nz, z1 = iz + 1 >= 0 && iz + 1 < nz;
        const std::int64_t base = static_cast<std::int64_t>(iz) * sxy +
                                  static_cast<std::int64_t>(iy) * nx + ix;
        if (z0) {
            if (y0) {
                if (x0) cb(base, wx0 * wy0 * wz0 * dt);
                if (x1) cb(base + 1, wx1 * wy0 * wz0 * dt);
            }
            if (y1) {
                if (x0) cb(base + nx, wx0 * wy1 * wz0 * dt);
                if (x1) cb(base + nx + 1, wx1 * wy1 * wz0 * dt);
            }
        }
        if (z1) {
            if (y0) {
                if (x0) cb(base + sxy, wx0 * wy0 * wz1 * dt);
                if (x1) cb(base + sxy + 1, wx1 * wy0 * wz1 * dt);
            }
            if (y1) {
                if (x0) cb(base + sxy + nx, wx0 * wy1 * wz1 * dt);
                if (x1) cb(base + sxy + nx + 1, wx1 * wy1 * wz1 * dt);
            }
        }
    }
}

void check_shapes(const GridSpec& grid, const Geometry& geo) {
    validate(grid);
    validate(geo);
    if (grid.ndim != geometry_ndim(geo))
        throw ShapeError("projector: grid dimensionality does not match geometry");
}

// ---------------------------------------------------------------------------
// Drivers. Forward parallelizes over rays (each ray owns one output bin).
// The adjoint scatters into K fixed angle stripes (stripe = angle mod K)
// reduced in stripe order, so results do not depend on the thread count.
// ---------------------------------------------------------------------------
template <class T, class Ray>
void forward_rays(std::int64_t n_rays, T* out, const Ray& ray) {
    parallel_for(n_rays, [&](std::int64_t b, std::int64_t e) {
        for (std::int64_t r = b; r < e; ++r) out[r] = static_cast<T>(ray(r));
    });
}

template <class T>
void forward_impl(const T* x, const GridSpec& grid, const Geometry& geo, T* out) {
    if (const auto* pg = std::get_if<ParallelGeometry2D>(&geo)) {
        std::vector<double> ct(pg->angles.size()), st(pg->angles.size());
        for (size_t a = 0; a < pg->angles.size(); ++a) {
            ct[a] = std::cos(pg->angles[a]);
            st[a] = std::sin(pg->angles[a]);
        }
        const int n_det = pg->n_det;
        forward_rays(static_cast<std::int64_t>(pg->n_angles) * n_det, out, [&](std::int64_t r) {
            const int ia = static_cast<int>(r / n_det), is = static_cast<int>(r % n_det);
            const double s = det_coord(is, n_det, pg->det_pitch);
            double acc = 0.0;
            trace_parallel_2d(grid, ct[ia], st[ia], s,
                              [&](std::int64_t j, double w) { acc += w * x[j]; });
            return acc;
        });
        return;
    }
    const auto& cg = std::get<ConeBeamGeometry>(geo);
    std::vector<ConeFrame> frames(cg.angles.size());
    for (size_t a = 0; a < cg.angles.size(); ++a) frames[a] = cone_frame(cg, cg.angles[a]);
    const std::int64_t per_angle = static_cast<std::int64_t>(cg.det_rows) * cg.det_cols;
    forward_rays(per_angle * static_cast<std::int64_t>(cg.angles.size()), out, [&](std::int64_t r) {
        const int ia = static_cast<int>(r / per_angle);
        const int row = static_cast<int>(r % per_angle / cg.det_cols);
        const int col = static_cast<int>(r % cg.det_cols);
        const double u = det_coord(col, cg.det_cols, cg.det_pitch);
        const double v = det_coord(row, cg.det_rows, cg.det_pitch);
        double acc = 0.0;
        trace_cone_3d(grid, cg, frames[ia], u, v,
                      [&](std::int64_t j, double w) { acc += w * x[j]; });
        return acc;
    });
}

int stripe_count(std::int64_t n_voxels) { return n_voxels <= (1 << 21) ? 8 : 2; }

template <class T>
void adjoint_impl(const T* y, const GridSpec& grid, const Geometry& geo, T* out) {
    const std::int64_t nvox = grid.n_voxels();
    const int n_angles = geometry_n_angles(geo);
    const int k_stripes = std::min<int>(stripe_count(nvox), n_angles);
    std::vector<double> stripes(static_cast<size_t>(k_stripes) * nvox, 0.0);

    if (const auto* pg = std::get_if<ParallelGeometry2D>(&geo)) {
        std::vector<double> ct(pg->angles.size()), st(pg->angles.size());
        for (size_t a = 0; a < pg->angles.size(); ++a) {
            ct[a] = std::cos(pg->angles[a]);
            st[a] = std::sin(pg->angles[a]);
        }
        parallel_for(k_stripes, [&](std::int64_t kb, std::int64_t ke) {
            for (std::int64_t k = kb; k < ke; ++k) {
                double* buf = stripes.data() + k * nvox;
                for (int ia = static_cast<int>(k); ia < n_angles; ia += k_stripes)
                    for (int is = 0; is < pg->n_det; ++is) {
                        const double val = y[static_cast<std::int64_t>(ia) * pg->n_det + is];
                        if (val == 0.0) continue;
                        const double s = det_coord(is, pg->n_det, pg->det_pitch);
                        trace_parallel_2d(grid, ct[ia], st[ia], s,
                                          [&](std::int64_t j, double w) { buf[j] += w * val; });
                    }
            }
        });
    } else {
        const auto& cg = std::get<ConeBeamGeometry>(geo);
        std::vector<ConeFrame> frames(cg.angles.size());
        for (size_t a = 0; a < cg.angles.size(); ++a) frames[a] = cone_frame(cg, cg.angles[a]);
        const std::int64_t per_angle = static_cast<std::int64_t>(cg.det_rows) * cg.det_cols;
        parallel_for(k_stripes, [&](std::int64_t kb, std::int64_t ke) {
            for (std::int64_t k = kb; k < ke; ++k) {
                double* buf = stripes.data() + k * nvox;
                for (int ia = static_cast<int>(k); ia < n_angles; ia += k_stripes)
                    for (int row = 0; row < cg.det_rows; ++row)
                        for (int col = 0; col < cg.det_cols; ++col) {
                            const double val =
                                y[per_angle * ia + static_cast<std::int64_t>(row) * cg.det_cols + col];
                            if (val == 0.0) continue;
                            const double u = det_coord(col, cg.det_cols, cg.det_pitch);
                            const double v = det_coord(row, cg.det_rows, cg.det_pitch);
                            trace_cone_3d(grid, cg, frames[ia], u, v,
                                          [&](std::int64_t j, double w) { buf[j] += w * val; });
                        }
            }
        });
    }

    parallel_for(nvox, [&](std::int64_t b, std::int64_t e) {
        for (std::int64_t j = b; j < e; ++j) {
            double acc = 0.0;
            for (int k = 0; k < k_stripes; ++k) acc += stripes[k * nvox + j];
            out[j] = static_cast<T>(acc);
        }
    });
}

template <class T>
void scalings_impl(const Geometry& geo, const GridSpec& grid, std::vector<T>& row_inv,
                   std::vector<T>& col_inv) {
    const std::int64_t nray = sino_size(geo);
    const std::int64_t nvox = grid.n_voxels();
    std::vector<T> ones_vol(static_cast<size_t>(nvox), T(1));
    row_inv.assign(static_cast<size_t>(nray), T(0));
    forward_impl(ones_vol.data(), grid, geo, row_inv.data());
    std::vector<T> ones_sino(static_cast<size_t>(nray), T(1));
    col_inv.assign(static_cast<size_t>(nvox), T(0));
    adjoint_impl(ones_sino.data(), grid, geo, col_inv.data());
    auto invert = [](std::vector<T>& a) {
        for (auto& x : a) x = x == T(0) ? T(0) : T(1) / x;
    };
    invert(row_inv);
    invert(col_inv);
}

}  // namespace

Sinogram forward_project(const Volume& x, const Geometry& geo) {
    check_shapes(x.grid, geo);
    Sinogram out = make_sinogram(geo);
    forward_impl(x.v.data(), x.grid, geo, out.v.data());
    return out;
}

Volume back_project(const Sinogram& y, const GridSpec& grid) {
    check_shapes(grid, y.geo);
    if (static_cast<std::int64_t>(y.v.size()) != sino_size(y.geo))
        throw ShapeError("back_project: sinogram payload does not match its geometry");
    Volume out = make_volume(grid);
    adjoint_impl(y.v.data(), grid, y.geo, out.v.data());
    return out;
}

SirtScaling sirt_scalings(const Geometry& geo, const GridSpec& grid) {
    check_shapes(grid, geo);
    SirtScaling sc;
    scalings_impl(geo, grid, sc.row_inv, sc.col_inv);
    return sc;
}

Volume scaled_gradient(const Volume& x, const Sinogram& y, const SirtScaling& sc) {
    check_shapes(x.grid, y.geo);
    if (sc.row_inv.size() != y.v.size() || sc.col_inv.size() != x.v.size())
        throw ShapeError("scaled_gradient: scaling shapes do not match data");
    Sinogram r = forward_project(x, y.geo);
    parallel_for(static_cast<std::int64_t>(r.v.size()), [&](std::int64_t b, std::int64_t e) {
        for (std::int64_t i = b; i < e; ++i)
            r.v[i] = (y.v[i] - r.v[i]) * sc.row_inv[i];
    });
    Volume g = back_project(r, x.grid);
    parallel_for(static_cast<std::int64_t>(g.v.size()), [&](std::int64_t b, std::int64_t e) {
        for (std::int64_t j = b; j < e; ++j) g.v[j] *= sc.col_inv[j];
    });
    return g;
}

double op_norm_sq(const Geometry& geo, const GridSpec& grid, int iters, std::uint64_t seed) {
    check_shapes(grid, geo);
    const std::int64_t nvox = grid.n_voxels();
    RandomStream rng(seed, rng_stream::kOpNorm);
    std::vector<double> x(static_cast<size_t>(nvox));
    for (auto& v : x) v = rng.normal();
    std::vector<double> y(static_cast<size_t>(sino_size(geo)));
    double lambda = 0.0;
    for (int it = 0; it < iters; ++it) {
        forward_impl(x.data(), grid, geo, y.data());
        std::vector<double> z(static_cast<size_t>(nvox));
        adjoint_impl(y.data(), grid, geo, z.data());
        double nz = 0.0;
        for (double v : z) nz += v * v;
        nz = std::sqrt(nz);
        if (nz == 0.0) return 0.0;
        double dot = 0.0;
        for (std::int64_t j = 0; j < nvox; ++j) dot += x[j] * z[j];
        lambda = dot;  // Rayleigh quotient of A^T A at unit x
        for (std::int64_t j = 0; j < nvox; ++j) x[j] = z[j] / nz;
    }
    return lambda;
}

std::vector<double> forward_project_d(const std::vector<double>& x, const GridSpec& grid,
                                      const Geometry& geo) {
    check_shapes(grid, geo);
    if (static_cast<std::int64_t>(x.size()) != grid.n_voxels())
        throw ShapeError("forward_project_d: volume size does not match grid");
    std::vector<double> out(static_cast<size_t>(sino_size(geo)));
    forward_impl(x.data(), grid, geo, out.data());
    return out;
}

std::vector<double> back_project_d(const std::vector<double>& y, const GridSpec& grid,
                                   const Geometry& geo) {
    check_shapes(grid, geo);
    if (static_cast<std::int64_t>(y.size()) != sino_size(geo))
        throw ShapeError("back_project_d: sinogram size does not match geometry");
    std::vector<double> out(static_cast<size_t>(grid.n_voxels()));
    adjoint_impl(y.data(), grid, geo, out.data());
    return out;
}

SirtScalingD sirt_scalings_d(const Geometry& geo, const GridSpec& grid) {
    check_shapes(grid, geo);
    SirtScalingD sc;
    scalings_impl(geo, grid, sc.row_inv, sc.col_inv);
    return sc;
}

}  // namespace lsirt
