#include "lsirt/geometry.hpp"

#include <cmath>
#include <string>

#include "lsirt/errors.hpp"

namespace lsirt {

GridSpec make_grid_2d(int nx, int ny, double pitch) {
    GridSpec g{2, {nx, ny, 1}, pitch};
    validate(g);
    return g;
}

GridSpec make_grid_3d(int nx, int ny, int nz, double pitch) {
    GridSpec g{3, {nx, ny, nz}, pitch};
    validate(g);
    return g;
}

std::vector<double> full_circle_angles(int n) {
    std::vector<double> a(static_cast<size_t>(n > 0 ? n : 0));
    for (int k = 0; k < n; ++k) a[k] = 2.0 * 3.14159265358979323846 * k / n;
    return a;
}

ParallelGeometry2D make_parallel_geometry(int n_angles, int n_det, double det_pitch) {
    ParallelGeometry2D g{n_angles, n_det, det_pitch, full_circle_angles(n_angles)};
    validate(g);
    return g;
}

ConeBeamGeometry make_cone_geometry(int n_angles, int det_rows, int det_cols,
                                    double det_pitch, double sad, double sdd) {
    ConeBeamGeometry g{sad, sdd, det_rows, det_cols, det_pitch, full_circle_angles(n_angles)};
    validate(g);
    return g;
}

double magnification(const ConeBeamGeometry& g) { return g.sdd / g.sad; }

namespace {

void check_angles(const std::vector<double>& a) {
    if (a.empty()) throw ConfigError("geometry needs at least one projection angle");
    for (double x : a)
        if (!std::isfinite(x)) throw ConfigError("non-finite projection angle");
}

}  // namespace

void validate(const ParallelGeometry2D& g) {
    if (g.n_det < 1) throw ConfigError("parallel geometry: n_det must be >= 1");
    if (!(g.det_pitch > 0)) throw ConfigError("parallel geometry: det_pitch must be > 0");
    if (g.n_angles != static_cast<int>(g.angles.size()))
        throw ConfigError("parallel geometry: n_angles does not match angle list");
    check_angles(g.angles);
}

void validate(const ConeBeamGeometry& g) {
    if (g.det_rows < 1 || g.det_cols < 1)
        throw ConfigError("cone geometry: detector must be at least 1x1");
    if (!(g.det_pitch > 0)) throw ConfigError("cone geometry: det_pitch must be > 0");
    if (!(g.sad > 0)) throw ConfigError("cone geometry: sad must be > 0");
    if (!(g.sdd > g.sad))
        throw ConfigError("cone geometry: sdd must exceed sad (got sad=" +
                          std::to_string(g.sad) + ", sdd=" + std::to_string(g.sdd) + ")");
    check_angles(g.angles);
}

void validate(const Geometry& g) {
    std::visit([](const auto& gg) { validate(gg); }, g);
}

void validate(const GridSpec& g) {
    if (g.ndim != 2 && g.ndim != 3) throw ConfigError("grid: ndim must be 2 or 3");
    if (g.dims[0] < 1 || g.dims[1] < 1 || g.dims[2] < 1)
        throw ConfigError("grid: dims must be positive");
    if (g.ndim == 2 && g.dims[2] != 1) throw ConfigError("grid: 2D grid must have nz == 1");
    if (!(g.pitch > 0)) throw ConfigError("grid: pitch must be > 0");
}

int geometry_ndim(const Geometry& g) {
    return std::holds_alternative<ParallelGeometry2D>(g) ? 2 : 3;
}

int geometry_n_angles(const Geometry& g) {
    return std::visit([](const auto& gg) { return static_cast<int>(gg.angles.size()); }, g);
}

std::int64_t sino_size(const Geometry& g) {
    if (const auto* p = std::get_if<ParallelGeometry2D>(&g))
        return static_cast<std::int64_t>(p->n_angles) * p->n_det;
    const auto& c = std::get<ConeBeamGeometry>(g);
    return static_cast<std::int64_t>(c.angles.size()) * c.det_rows * c.det_cols;
}

}  // namespace lsirt
