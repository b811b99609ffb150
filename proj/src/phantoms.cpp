#include "lsirt/phantoms.hpp"

#include <algorithm>
#include <cmath>

#include "lsirt/errors.hpp"
#include "lsirt/parallel.hpp"

namespace lsirt::phantoms {
namespace {

constexpr double kPi = 3.14159265358979323846;

void require_min_dims(const GridSpec& g, int min_dim, const char* who) {
    for (int a = 0; a < g.ndim; ++a)
        if (g.dims[a] < min_dim)
            throw ConfigError(std::string(who) + ": dims must be >= " + std::to_string(min_dim));
}

double edge(double ax, double ay, double bx, double by, double px, double py) {
    return (bx - ax) * (py - ay) - (by - ay) * (px - ax);
}

}  // namespace

Volume triangles(std::uint64_t seed, const GridSpec& grid) {
    if (grid.ndim != 2) throw ConfigError("triangles: 2D grids only");
    require_min_dims(grid, 8, "triangles");
    const int nx = grid.dims[0], ny = grid.dims[1];
    Volume out = make_volume(grid);
    RandomStream rng(seed, rng_stream::kTriangles);

    for (int t = 0; t < 6; ++t) {
        double vx[3], vy[3];
        for (int k = 0; k < 3; ++k) {
            vx[k] = rng.uniform(0.0, nx);
            vy[k] = rng.uniform(0.0, ny);
        }
        const double intensity = rng.exponential();
        double area2 = edge(vx[0], vy[0], vx[1], vy[1], vx[2], vy[2]);
        if (area2 == 0.0) continue;
        if (area2 < 0.0) {
            std::swap(vx[1], vx[2]);
            std::swap(vy[1], vy[2]);
        }
        const int x0 = std::max(0, static_cast<int>(std::floor(std::min({vx[0], vx[1], vx[2]}) - 0.5)));
        const int x1 = std::min(nx - 1, static_cast<int>(std::ceil(std::max({vx[0], vx[1], vx[2]}))));
        const int y0 = std::max(0, static_cast<int>(std::floor(std::min({vy[0], vy[1], vy[2]}) - 0.5)));
        const int y1 = std::min(ny - 1, static_cast<int>(std::ceil(std::max({vy[0], vy[1], vy[2]}))));
        for (int iy = y0; iy <= y1; ++iy) {
            const double py = iy + 0.5;
            for (int ix = x0; ix <= x1; ++ix) {
                const double px = ix + 0.5;
                if (edge(vx[0], vy[0], vx[1], vy[1], px, py) >= 0.0 &&
                    edge(vx[1], vy[1], vx[2], vy[2], px, py) >= 0.0 &&
                    edge(vx[2], vy[2], vx[0], vy[0], px, py) >= 0.0)
                    out.v[vol_index(grid, ix, iy)] += static_cast<float>(intensity);
            }
        }
    }

    double norm_sq = 0.0;
    for (float v : out.v) norm_sq += static_cast<double>(v) * v;
    if (norm_sq > 0.0) {
        const float inv = static_cast<float>(1.0 / std::sqrt(norm_sq));
        for (auto& v : out.v) v *= inv;
    }
    return out;
}

double sample_radius(RandomStream& rng) {
    const double a = std::sqrt(128.0);
    return std::abs(rng.uniform(-a, a));
}

Volume ellipsoids(std::uint64_t seed, const GridSpec& grid) {
    if (grid.ndim != 3) throw ConfigError("ellipsoids: 3D grids only");
    require_min_dims(grid, 8, "ellipsoids");
    const int nx = grid.dims[0], ny = grid.dims[1], nz = grid.dims[2];
    Volume out = make_volume(grid);
    RandomStream rng(seed, rng_stream::kEllipsoids);

    for (int e = 0; e < 20; ++e) {
        // centers/radii in voxel coordinates (radius law is grid-relative)
        const double cx = rng.uniform(0.0, nx);
        const double cy = rng.uniform(0.0, ny);
        const double cz = rng.uniform(0.0, nz);
        const double rx = sample_radius(rng);
        const double ry = sample_radius(rng);
        const double rz = sample_radius(rng);
        const double intensity = rng.normal();
        if (rx == 0.0 || ry == 0.0 || rz == 0.0) continue;

        const int z0 = std::max(0, static_cast<int>(std::floor(cz - rz - 0.5)));
        const int z1 = std::min(nz - 1, static_cast<int>(std::ceil(cz + rz)));
        const int y0 = std::max(0, static_cast<int>(std::floor(cy - ry - 0.5)));
        const int y1 = std::min(ny - 1, static_cast<int>(std::ceil(cy + ry)));
        const int x0 = std::max(0, static_cast<int>(std::floor(cx - rx - 0.5)));
        const int x1 = std::min(nx - 1, static_cast<int>(std::ceil(cx + rx)));
        for (int iz = z0; iz <= z1; ++iz) {
            const double dz = (iz + 0.5 - cz) / rz;
            for (int iy = y0; iy <= y1; ++iy) {
                const double dy = (iy + 0.5 - cy) / ry;
                for (int ix = x0; ix <= x1; ++ix) {
                    const double dx = (ix + 0.5 - cx) / rx;
                    if (dx * dx + dy * dy + dz * dz <= 1.0)
                        out.v[vol_index(grid, ix, iy, iz)] += static_cast<float>(intensity);
                }
            }
        }
    }
    return out;
}

namespace {

struct Ellipsoid {
    double a, b, c, x0, y0, z0, phi_deg, value;
};

// High-contrast head phantom table: standard geometry with the low-contrast
// values scaled so the outer shell reads 2.0.
constexpr Ellipsoid kHead[10] = {
    {0.6900, 0.9200, 0.810, 0.00, 0.0000, 0.00, 0.0, 2.0},
    {0.6624, 0.8740, 0.780, 0.00, -0.0184, 0.00, 0.0, -1.6},
    {0.1100, 0.3100, 0.220, 0.22, 0.0000, 0.00, -18.0, -0.4},
    {0.1600, 0.4100, 0.280, -0.22, 0.0000, 0.00, 18.0, -0.4},
    {0.2100, 0.2500, 0.410, 0.00, 0.3500, -0.15, 0.0, 0.2},
    {0.0460, 0.0460, 0.050, 0.00, 0.1000, 0.25, 0.0, 0.2},
    {0.0460, 0.0460, 0.050, 0.00, -0.1000, 0.25, 0.0, 0.2},
    {0.0460, 0.0230, 0.050, -0.08, -0.6050, 0.00, 0.0, 0.2},
    {0.0230, 0.0230, 0.020, 0.00, -0.6060, 0.00, 0.0, 0.2},
    {0.0230, 0.0460, 0.020, 0.06, -0.6050, 0.00, 0.0, 0.2},
};

}  // namespace

Volume shepp_logan(const GridSpec& grid) {
    require_min_dims(grid, 16, "shepp_logan");
    const int nx = grid.dims[0], ny = grid.dims[1], nz = grid.dims[2];
    Volume out = make_volume(grid);

    parallel_for(static_cast<std::int64_t>(nz) * ny, [&](std::int64_t b, std::int64_t e) {
        for (std::int64_t r = b; r < e; ++r) {
            const int iz = static_cast<int>(r / ny), iy = static_cast<int>(r % ny);
            const bool flat = grid.ndim == 2;  // classic 2D table: no z-extents
            const double yu = (2.0 * iy - ny + 1) / ny;
            const double zu = flat ? 0.0 : (2.0 * iz - nz + 1) / nz;
            float* row = out.v.data() + r * nx;
            for (int ix = 0; ix < nx; ++ix) {
                const double xu = (2.0 * ix - nx + 1) / nx;
                double val = 0.0;
                for (const auto& el : kHead) {
                    const double dz = flat ? 0.0 : zu - el.z0;
                    if (!flat && std::abs(dz) > el.c) continue;
                    const double phi = el.phi_deg * kPi / 180.0;
                    const double dx = xu - el.x0, dy = yu - el.y0;
                    const double xr = std::cos(phi) * dx + std::sin(phi) * dy;
                    const double yr = -std::sin(phi) * dx + std::cos(phi) * dy;
                    double q = xr * xr / (el.a * el.a) + yr * yr / (el.b * el.b);
                    if (!flat) q += dz * dz / (el.c * el.c);
                    if (q <= 1.0) val += el.value;
                }
                row[ix] = static_cast<float>(val);
            }
        }
    });
    return out;
}

Volume gaussian_square(double amplitude, const GridSpec& grid) {
    if (grid.ndim != 2) throw ConfigError("gaussian_square: 2D grids only");
    require_min_dims(grid, 16, "gaussian_square");
    const int nx = grid.dims[0], ny = grid.dims[1];
    const double p = grid.pitch;
    const double side = std::min(nx, ny) / 4 * p;
    Volume out = make_volume(grid);
    for (int iy = 0; iy < ny; ++iy) {
        const double y = (iy - 0.5 * (ny - 1)) * p;
        for (int ix = 0; ix < nx; ++ix) {
            const double x = (ix - 0.5 * (nx - 1)) * p;
            const bool in_square = x > 0.0 && x < side && y > 0.0 && y < side;
            out.v[vol_index(grid, ix, iy)] =
                in_square ? 0.0f
                          : static_cast<float>(amplitude * std::exp(-0.002 * (x * x + y * y)));
        }
    }
    return out;
}

Sinogram add_noise(const Sinogram& s, double variance, std::uint64_t seed) {
    if (variance < 0.0) throw ConfigError("add_noise: variance must be >= 0");
    Sinogram out = s;
    if (variance == 0.0) return out;
    const double sigma = std::sqrt(variance);
    parallel_for(static_cast<std::int64_t>(out.v.size()), [&](std::int64_t b, std::int64_t e) {
        for (std::int64_t i = b; i < e; ++i)
            out.v[i] += static_cast<float>(sigma * normal_at(seed, rng_stream::kNoise, static_cast<std::uint64_t>(i)));
    });
    return out;
}

}  // namespace lsirt::phantoms
