// Independent reference implementations used to cross-check the production
// operators: straightforward per-ray weight enumeration assembled into dense
// matrices, double precision throughout, no shared code with src/.
#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <map>
#include <vector>

#include "lsirt/geometry.hpp"

namespace oracle {

using WeightMap = std::map<std::int64_t, double>;

// One 2D parallel-beam ray: walk the dominant axis row by row, linear
// interpolation across it, per-slab length pitch / |dominant dir|.
inline WeightMap ray2d(const lsirt::GridSpec& g, double theta, double s) {
    WeightMap w;
    const int nx = g.dims[0], ny = g.dims[1];
    const double p = g.pitch;
    const double ux = std::cos(theta), uy = std::sin(theta);
    const double dx = -uy, dy = ux;
    const double ox = s * ux, oy = s * uy;
    if (std::abs(dy) >= std::abs(dx)) {
        for (int iy = 0; iy < ny; ++iy) {
            const double y = (iy - 0.5 * (ny - 1)) * p;
            const double t = (y - oy) / dy;
            const double x = ox + t * dx;
            const double fx = x / p + 0.5 * (nx - 1);
            const int i0 = static_cast<int>(std::floor(fx));
            const double f = fx - std::floor(fx);
            if (i0 >= 0 && i0 < nx) w[static_cast<std::int64_t>(iy) * nx + i0] += (1.0 - f) * p / std::abs(dy);
            if (i0 + 1 >= 0 && i0 + 1 < nx) w[static_cast<std::int64_t>(iy) * nx + i0 + 1] += f * p / std::abs(dy);
        }
    } else {
        for (int ix = 0; ix < nx; ++ix) {
            const double x = (ix - 0.5 * (nx - 1)) * p;
            const double t = (x - ox) / dx;
            const double y = oy + t * dy;
            const double fy = y / p + 0.5 * (ny - 1);
            const int i0 = static_cast<int>(std::floor(fy));
            const double f = fy - std::floor(fy);
            if (i0 >= 0 && i0 < ny) w[static_cast<std::int64_t>(i0) * nx + ix] += (1.0 - f) * p / std::abs(dx);
            if (i0 + 1 >= 0 && i0 + 1 < ny) w[static_cast<std::int64_t>(i0 + 1) * nx + ix] += f * p / std::abs(dx);
        }
    }
    return w;
}

// One cone-beam ray: source at (sad cos b, sad sin b, 0), panel centered at
// distance sdd along the central ray, u axis (-sin b, cos b, 0), v axis +z.
// Midpoint samples at nominal pitch/2 spacing over the ray clipped to the
// grid's outer box, trilinear taps.
inline WeightMap ray3d(const lsirt::GridSpec& g, const lsirt::ConeBeamGeometry& geo,
                       double beta, double u, double v) {
    WeightMap w;
    const int nx = g.dims[0], ny = g.dims[1], nz = g.dims[2];
    const double p = g.pitch;
    const double cb = std::cos(beta), sb = std::sin(beta);
    const double sx = geo.sad * cb, sy = geo.sad * sb, sz = 0.0;
    const double px = sx - geo.sdd * cb - u * sb;
    const double py = sy - geo.sdd * sb + u * cb;
    const double pz = v;
    double dx = px - sx, dy = py - sy, dz = pz - sz;
    const double len = std::sqrt(dx * dx + dy * dy + dz * dz);
    dx /= len;
    dy /= len;
    dz /= len;

    double t0 = -1e300, t1 = 1e300;
    auto clip = [&](double s0, double d, double h) {
        if (d == 0.0) return std::abs(s0) <= h;
        const double inv = 1.0 / d;
        double a = (-h - s0) * inv, b = (h - s0) * inv;
        if (a > b) std::swap(a, b);
        t0 = std::max(t0, a);
        t1 = std::min(t1, b);
        return t0 < t1;
    };
    if (!clip(sx, dx, 0.5 * nx * p)) return w;
    if (!clip(sy, dy, 0.5 * ny * p)) return w;
    if (!clip(sz, dz, 0.5 * nz * p)) return w;
    if (!(t1 > t0)) return w;

    const int n = static_cast<int>(std::ceil((t1 - t0) / (0.5 * p)));
    const double dt = (t1 - t0) / n;
    for (int k = 0; k < n; ++k) {
        const double t = t0 + (k + 0.5) * dt;
        const double fx = (sx + t * dx) / p + 0.5 * (nx - 1);
        const double fy = (sy + t * dy) / p + 0.5 * (ny - 1);
        const double fz = (sz + t * dz) / p + 0.5 * (nz - 1);
        const int ix = static_cast<int>(std::floor(fx));
        const int iy = static_cast<int>(std::floor(fy));
        const int iz = static_cast<int>(std::floor(fz));
        const double ax = fx - std::floor(fx), ay = fy - std::floor(fy), az = fz - std::floor(fz);
        for (int oz = 0; oz < 2; ++oz)
            for (int oy2 = 0; oy2 < 2; ++oy2)
                for (int ox2 = 0; ox2 < 2; ++ox2) {
                    const int jx = ix + ox2, jy = iy + oy2, jz = iz + oz;
                    if (jx < 0 || jx >= nx || jy < 0 || jy >= ny || jz < 0 || jz >= nz) continue;
                    const double wt = (ox2 ? ax : 1.0 - ax) * (oy2 ? ay : 1.0 - ay) *
                                      (oz ? az : 1.0 - az) * dt;
                    w[(static_cast<std::int64_t>(jz) * ny + jy) * nx + jx] += wt;
                }
    }
    return w;
}

// Dense system matrix, rays in the production sinogram order.
inline Eigen::MatrixXd dense_matrix(const lsirt::GridSpec& g, const lsirt::Geometry& geo) {
    const std::int64_t n_vox = g.n_voxels();
    const std::int64_t n_ray = lsirt::sino_size(geo);
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n_ray, n_vox);
    if (const auto* pg = std::get_if<lsirt::ParallelGeometry2D>(&geo)) {
        for (int ia = 0; ia < pg->n_angles; ++ia)
            for (int is = 0; is < pg->n_det; ++is) {
                const double s = (is - 0.5 * (pg->n_det - 1)) * pg->det_pitch;
                for (const auto& [j, wt] : ray2d(g, pg->angles[ia], s))
                    A(static_cast<std::int64_t>(ia) * pg->n_det + is, j) = wt;
            }
        return A;
    }
    const auto& cg = std::get<lsirt::ConeBeamGeometry>(geo);
    const std::int64_t per_angle = static_cast<std::int64_t>(cg.det_rows) * cg.det_cols;
    for (size_t ia = 0; ia < cg.angles.size(); ++ia)
        for (int r = 0; r < cg.det_rows; ++r)
            for (int c = 0; c < cg.det_cols; ++c) {
                const double u = (c - 0.5 * (cg.det_cols - 1)) * cg.det_pitch;
                const double v = (r - 0.5 * (cg.det_rows - 1)) * cg.det_pitch;
                for (const auto& [j, wt] : ray3d(g, cg, cg.angles[ia], u, v))
                    A(per_angle * ia + static_cast<std::int64_t>(r) * cg.det_cols + c, j) = wt;
            }
    return A;
}

}  // namespace oracle
