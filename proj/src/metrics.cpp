#include "lsirt/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <string>

#include "lsirt/errors.hpp"
#include "lsirt/fft.hpp"

namespace lsirt::metrics {
namespace {

constexpr double kPi = 3.14159265358979323846;

std::array<double, 3> voxel_mm(const GridSpec& g, int ix, int iy, int iz) {
    return {(ix - 0.5 * (g.dims[0] - 1)) * g.pitch,
            (iy - 0.5 * (g.dims[1] - 1)) * g.pitch,
            (iz - 0.5 * (g.dims[2] - 1)) * g.pitch};
}

std::array<double, 3> normalized(const std::array<double, 3>& a, const char* what) {
    const double n = std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]);
    if (!(n > 0.0)) throw ConfigError(std::string(what) + ": zero-length axis");
    return {a[0] / n, a[1] / n, a[2] / n};
}

void validate_roi(const RoiSpec& roi) {
    if (roi.shape == RoiSpec::Shape::cylinder) {
        if (!(roi.radius > 0.0)) throw ConfigError("roi: cylinder radius must be positive");
        if (roi.half_length < 0.0) throw ConfigError("roi: cylinder half_length must be >= 0");
    } else {
        if (!(roi.half_extents[0] > 0.0) || !(roi.half_extents[1] > 0.0) ||
            roi.half_extents[2] < 0.0)
            throw ConfigError("roi: box half_extents must be positive (z >= 0)");
    }
}

bool roi_contains(const RoiSpec& roi, const std::array<double, 3>& axis,
                  const std::array<double, 3>& p) {
    const double d0 = p[0] - roi.center[0];
    const double d1 = p[1] - roi.center[1];
    const double d2 = p[2] - roi.center[2];
    if (roi.shape == RoiSpec::Shape::box)
        return std::abs(d0) <= roi.half_extents[0] && std::abs(d1) <= roi.half_extents[1] &&
               std::abs(d2) <= roi.half_extents[2];
    const double t = d0 * axis[0] + d1 * axis[1] + d2 * axis[2];
    if (std::abs(t) > roi.half_length) return false;
    const double rad_sq = d0 * d0 + d1 * d1 + d2 * d2 - t * t;
    return rad_sq <= roi.radius * roi.radius;
}

struct RoiStats {
    double sum = 0.0, sum_sq = 0.0;
    std::int64_t n = 0;

    void add(double v) {
        sum += v;
        sum_sq += v * v;
        ++n;
    }
    double mean() const { return sum / (double)n; }
    double var() const {
        const double m = mean();
        return std::max(0.0, sum_sq / (double)n - m * m);
    }
};

// Bilinear (2D) / trilinear (3D) sample at a physical point; false when any
// support voxel falls outside the grid.
bool sample_at(const Volume& vol, const std::array<double, 3>& p, double& out) {
    const auto& g = vol.grid;
    const double gx = p[0] / g.pitch + 0.5 * (g.dims[0] - 1);
    const double gy = p[1] / g.pitch + 0.5 * (g.dims[1] - 1);
    const double gz = g.ndim == 3 ? p[2] / g.pitch + 0.5 * (g.dims[2] - 1) : 0.0;
    if (gx < 0.0 || gx > g.dims[0] - 1 || gy < 0.0 || gy > g.dims[1] - 1) return false;
    if (g.ndim == 3 && (gz < 0.0 || gz > g.dims[2] - 1)) return false;

    const int x0 = std::min((int)gx, g.dims[0] - 2 >= 0 ? g.dims[0] - 2 : 0);
    const int y0 = std::min((int)gy, g.dims[1] - 2 >= 0 ? g.dims[1] - 2 : 0);
    const double fx = gx - x0, fy = gy - y0;
    auto at = [&](int ix, int iy, int iz) {
        return (double)vol.v[(size_t)vol_index(g, ix, iy, iz)];
    };
    if (g.ndim == 2) {
        out = (1 - fx) * (1 - fy) * at(x0, y0, 0) + fx * (1 - fy) * at(x0 + 1, y0, 0) +
              (1 - fx) * fy * at(x0, y0 + 1, 0) + fx * fy * at(x0 + 1, y0 + 1, 0);
        return true;
    }
    const int z0 = std::min((int)gz, g.dims[2] - 2 >= 0 ? g.dims[2] - 2 : 0);
    const double fz = gz - z0;
    const double c00 = (1 - fx) * at(x0, y0, z0) + fx * at(x0 + 1, y0, z0);
    const double c10 = (1 - fx) * at(x0, y0 + 1, z0) + fx * at(x0 + 1, y0 + 1, z0);
    const double c01 = (1 - fx) * at(x0, y0, z0 + 1) + fx * at(x0 + 1, y0, z0 + 1);
    const double c11 = (1 - fx) * at(x0, y0 + 1, z0 + 1) + fx * at(x0 + 1, y0 + 1, z0 + 1);
    out = (1 - fz) * ((1 - fy) * c00 + fy * c10) + fz * ((1 - fy) * c01 + fy * c11);
    return true;
}

}  // namespace

double psnr(const Volume& x, const Volume& ref, double data_range) {
    check_same_shape(x, ref, "psnr");
    if (!(data_range > 0.0)) throw ConfigError("psnr: data_range must be positive");
    double mse = 0.0;
    for (size_t j = 0; j < x.v.size(); ++j) {
        const double d = (double)x.v[j] - ref.v[j];
        mse += d * d;
    }
    mse /= (double)x.v.size();
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(data_range * data_range / mse);
}

double ssim(const Volume& x, const Volume& ref, double data_range) {
    check_same_shape(x, ref, "ssim");
    if (!(data_range > 0.0)) throw ConfigError("ssim: data_range must be positive");
    const auto& g = x.grid;
    const int W = 7;
    const int zwin = g.ndim == 3 ? W : 1;
    const int nx = g.dims[0], ny = g.dims[1], nz = g.dims[2];
    if (nx < W || ny < W || (g.ndim == 3 && nz < W))
        throw ConfigError("ssim: image smaller than the 7-wide window");

    const double c1 = (0.01 * data_range) * (0.01 * data_range);
    const double c2 = (0.03 * data_range) * (0.03 * data_range);
    const double wn = (double)W * W * zwin;

    // Per-field z-slab running sums, re-reduced to 2D summed-area tables for
    // each window depth; O(voxels) total and only 2D scratch.
    const int nf = 5;  // x, y, xx, yy, xy
    const size_t plane_n = (size_t)nx * ny;
    std::vector<std::vector<double>> slab(nf, std::vector<double>(plane_n, 0.0));
    std::vector<std::vector<double>> sat(nf, std::vector<double>((size_t)(nx + 1) * (ny + 1)));

    auto field = [&](int f, size_t j) {
        const double a = x.v[j], b = ref.v[j];
        switch (f) {
            case 0: return a;
            case 1: return b;
            case 2: return a * a;
            case 3: return b * b;
            default: return a * b;
        }
    };
    auto add_plane = [&](int z, double sign) {
        const size_t base = (size_t)z * plane_n;
        for (int f = 0; f < nf; ++f)
            for (size_t j = 0; j < plane_n; ++j) slab[f][j] += sign * field(f, base + j);
    };

    double total = 0.0;
    std::int64_t n_win = 0;
    for (int z0 = 0; z0 + zwin <= nz; ++z0) {
        if (z0 == 0)
            for (int z = 0; z < zwin; ++z) add_plane(z, 1.0);
        else {
            add_plane(z0 - 1, -1.0);
            add_plane(z0 + zwin - 1, 1.0);
        }
        for (int f = 0; f < nf; ++f) {
            auto& s = sat[f];
            for (int ix = 0; ix <= nx; ++ix) s[(size_t)0 * (nx + 1) + ix] = 0.0;
            for (int iy = 1; iy <= ny; ++iy) {
                double row = 0.0;
                s[(size_t)iy * (nx + 1)] = 0.0;
                for (int ix = 1; ix <= nx; ++ix) {
                    row += slab[f][(size_t)(iy - 1) * nx + (ix - 1)];
                    s[(size_t)iy * (nx + 1) + ix] = s[(size_t)(iy - 1) * (nx + 1) + ix] + row;
                }
            }
        }
        auto box = [&](int f, int x0, int y0) {
            const auto& s = sat[f];
            const int x1 = x0 + W, y1 = y0 + W;
            return s[(size_t)y1 * (nx + 1) + x1] - s[(size_t)y0 * (nx + 1) + x1] -
                   s[(size_t)y1 * (nx + 1) + x0] + s[(size_t)y0 * (nx + 1) + x0];
        };
        for (int y0 = 0; y0 + W <= ny; ++y0)
            for (int x0 = 0; x0 + W <= nx; ++x0) {
                const double mx = box(0, x0, y0) / wn;
                const double my = box(1, x0, y0) / wn;
                const double vx = box(2, x0, y0) / wn - mx * mx;
                const double vy = box(3, x0, y0) / wn - my * my;
                const double cov = box(4, x0, y0) / wn - mx * my;
                total += ((2 * mx * my + c1) * (2 * cov + c2)) /
                         ((mx * mx + my * my + c1) * (vx + vy + c2));
                ++n_win;
            }
    }
    return total / (double)n_win;
}

double cnr(const Volume& vol, const RoiSpec& insert, const std::vector<RoiSpec>& surround) {
    validate(vol.grid);
    validate_roi(insert);
    if (surround.empty()) throw ConfigError("cnr: at least one surround ROI required");
    for (const auto& r : surround) validate_roi(r);

    const auto ins_axis = normalized(insert.axis, "cnr");
    std::vector<std::array<double, 3>> sur_axis;
    for (const auto& r : surround) sur_axis.push_back(normalized(r.axis, "cnr"));

    RoiStats si, ss;
    const auto& g = vol.grid;
    for (int iz = 0; iz < g.dims[2]; ++iz)
        for (int iy = 0; iy < g.dims[1]; ++iy)
            for (int ix = 0; ix < g.dims[0]; ++ix) {
                const auto p = voxel_mm(g, ix, iy, iz);
                const double v = vol.v[(size_t)vol_index(g, ix, iy, iz)];
                int hits = 0;
                if (roi_contains(insert, ins_axis, p)) {
                    si.add(v);
                    ++hits;
                }
                for (size_t k = 0; k < surround.size(); ++k)
                    if (roi_contains(surround[k], sur_axis[k], p)) {
                        ss.add(v);
                        ++hits;
                    }
                if (hits > 1) throw ConfigError("cnr: ROIs overlap");
            }
    if (si.n == 0) throw ConfigError("cnr: insert ROI contains no voxels");
    if (ss.n == 0) throw ConfigError("cnr: surround ROIs contain no voxels");
    return std::abs(si.mean() - ss.mean()) / std::sqrt(si.var() + ss.var());
}

FwhmResult edge_fwhm(const Volume& vol, const RoiSpec& roi,
                     const std::array<double, 3>& center) {
    validate(vol.grid);
    validate_roi(roi);
    const auto axis = normalized(roi.axis, "edge_fwhm");

    const double dr = 0.25;
    const double r_max = roi.shape == RoiSpec::Shape::cylinder
                             ? roi.radius
                             : std::max({roi.half_extents[0], roi.half_extents[1],
                                         roi.half_extents[2]});
    const int n_bins = (int)std::floor(r_max / dr + 1e-9) + 1;

    // Orthonormal in-plane frame; 2D grids always use the xy plane.
    std::array<double, 3> u{1, 0, 0}, w{0, 1, 0};
    if (vol.grid.ndim == 3) {
        const int least = std::abs(axis[0]) < std::abs(axis[1])
                              ? (std::abs(axis[0]) < std::abs(axis[2]) ? 0 : 2)
                              : (std::abs(axis[1]) < std::abs(axis[2]) ? 1 : 2);
        std::array<double, 3> e{0, 0, 0};
        e[least] = 1.0;
        u = {axis[1] * e[2] - axis[2] * e[1], axis[2] * e[0] - axis[0] * e[2],
             axis[0] * e[1] - axis[1] * e[0]};
        u = normalized(u, "edge_fwhm");
        w = {axis[1] * u[2] - axis[2] * u[1], axis[2] * u[0] - axis[0] * u[2],
             axis[0] * u[1] - axis[1] * u[0]};
    }
    std::vector<double> offsets{0.0};
    if (vol.grid.ndim == 3 && roi.shape == RoiSpec::Shape::cylinder && roi.half_length > 0.0) {
        offsets.clear();
        for (double t = -roi.half_length; t <= roi.half_length + 1e-9; t += dr)
            offsets.push_back(t);
    }

    std::vector<double> sum(n_bins, 0.0);
    std::vector<std::int64_t> cnt(n_bins, 0);
    for (int k = 0; k < n_bins; ++k) {
        const double r = k * dr;
        for (int deg = 0; deg < 360; ++deg) {
            const double th = deg * kPi / 180.0;
            const double cu = r * std::cos(th), cw = r * std::sin(th);
            for (double t : offsets) {
                const std::array<double, 3> p{
                    center[0] + cu * u[0] + cw * w[0] + t * axis[0],
                    center[1] + cu * u[1] + cw * w[1] + t * axis[1],
                    center[2] + cu * u[2] + cw * w[2] + t * axis[2]};
                double value;
                if (!roi_contains(roi, axis, p)) continue;
                if (!sample_at(vol, p, value)) continue;
                sum[k] += value;
                ++cnt[k];
            }
        }
    }

    std::vector<double> rr, yy;
    for (int k = 0; k < n_bins; ++k)
        if (cnt[k] > 0) {
            rr.push_back(k * dr);
            yy.push_back(sum[k] / (double)cnt[k]);
        }
    const int n = (int)rr.size();
    if (n < 8) throw ConfigError("edge_fwhm: ROI yields too few radial samples");
    const auto [ymin, ymax] = std::minmax_element(yy.begin(), yy.end());
    if (*ymax - *ymin <= 1e-9 * std::max(1.0, std::abs(*ymax)))
        throw NumericError("edge_fwhm: radial profile is flat, no edge to fit");

    // 10%/90% crossing initialization.
    const int head = std::max(1, n / 10);
    double lo = 0.0, hi = 0.0;
    for (int k = 0; k < head; ++k) lo += yy[k] / head;
    for (int k = n - head; k < n; ++k) hi += yy[k] / head;
    auto crossing = [&](double level) {
        for (int k = 1; k < n; ++k) {
            const double a = yy[k - 1] - level, b = yy[k] - level;
            if (a == 0.0) return rr[k - 1];
            if ((a < 0.0) != (b < 0.0))
                return rr[k - 1] + (rr[k] - rr[k - 1]) * a / (a - b);
        }
        return -1.0;
    };
    const double ra = crossing(lo + 0.1 * (hi - lo));
    const double rb = crossing(lo + 0.9 * (hi - lo));
    double mu = (ra >= 0.0 && rb >= 0.0) ? 0.5 * (ra + rb) : 0.5 * (rr.front() + rr.back());
    double sigma = (ra >= 0.0 && rb >= 0.0 && std::abs(rb - ra) > 1e-6)
                       ? std::abs(rb - ra) / 2.5631
                       : (rr.back() - rr.front()) / 8.0;
    sigma = std::max(sigma, 0.01 * dr);

    // Gauss-Newton on (mu, sigma) with (lo, hi) solved linearly each pass and
    // Levenberg damping on the 2x2 normal equations.
    auto phi_cdf = [](double z) { return 0.5 * (1.0 + std::erf(z / std::sqrt(2.0))); };
    auto phi_pdf = [](double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * kPi); };

    std::vector<double> cdf(n);
    double sse = 0.0;
    auto eval = [&](double m, double s, double& lo_out, double& hi_out) {
        double a11 = 0, a12 = 0, a22 = 0, b1 = 0, b2 = 0;
        for (int k = 0; k < n; ++k) {
            cdf[k] = phi_cdf((rr[k] - m) / s);
            const double q = 1.0 - cdf[k];
            a11 += q * q;
            a12 += q * cdf[k];
            a22 += cdf[k] * cdf[k];
            b1 += q * yy[k];
            b2 += cdf[k] * yy[k];
        }
        const double det = a11 * a22 - a12 * a12;
        if (std::abs(det) < 1e-300) {
            lo_out = hi_out = b2 / std::max(a22, 1e-300);
        } else {
            lo_out = (b1 * a22 - b2 * a12) / det;
            hi_out = (a11 * b2 - a12 * b1) / det;
        }
        double e = 0.0;
        for (int k = 0; k < n; ++k) {
            const double f = lo_out + (hi_out - lo_out) * cdf[k];
            e += (f - yy[k]) * (f - yy[k]);
        }
        return e;
    };

    sse = eval(mu, sigma, lo, hi);
    double lambda = 1e-3;
    bool converged = false;
    for (int iter = 0; iter < 200 && !converged; ++iter) {
        double j11 = 0, j12 = 0, j22 = 0, g1 = 0, g2 = 0;
        for (int k = 0; k < n; ++k) {
            const double z = (rr[k] - mu) / sigma;
            const double d = (hi - lo) * phi_pdf(z);
            const double jm = -d / sigma;
            const double js = -d * z / sigma;
            const double e = lo + (hi - lo) * cdf[k] - yy[k];
            j11 += jm * jm;
            j12 += jm * js;
            j22 += js * js;
            g1 += jm * e;
            g2 += js * e;
        }
        bool stepped = false;
        for (int back = 0; back < 25; ++back) {
            const double a11 = j11 * (1.0 + lambda), a22 = j22 * (1.0 + lambda);
            const double det = a11 * a22 - j12 * j12;
            if (std::abs(det) < 1e-300) {
                lambda *= 10.0;
                continue;
            }
            const double dm = (-g1 * a22 + g2 * j12) / det;
            const double ds = (-a11 * g2 + j12 * g1) / det;
            const double m_new = mu + dm;
            const double s_new = std::max(sigma + ds, 0.01 * dr);
            double lo_new, hi_new;
            const double sse_new = eval(m_new, s_new, lo_new, hi_new);
            if (sse_new <= sse * (1.0 + 1e-14)) {
                converged = lambda <= 1.0 &&
                            std::abs(dm) <= 1e-9 * std::max(1.0, std::abs(mu)) &&
                            std::abs(s_new - sigma) <= 1e-9 * std::max(1.0, sigma);
                mu = m_new;
                sigma = s_new;
                lo = lo_new;
                hi = hi_new;
                sse = sse_new;
                lambda = std::max(lambda / 3.0, 1e-12);
                stepped = true;
                break;
            }
            lambda *= 10.0;
        }
        if (!stepped) break;
    }
    if (!converged)
        throw NumericError("edge_fwhm: fit did not converge; rms residual = " +
                           std::to_string(std::sqrt(sse / n)));

    FwhmResult out;
    out.fit = EdgeFit{mu, sigma, lo, hi};
    out.fwhm = 2.0 * std::sqrt(2.0 * std::log(2.0)) * sigma;
    return out;
}

PlaneImage dft_magnitude_slice(const Volume& vol, Plane plane, int index) {
    validate(vol.grid);
    const auto& g = vol.grid;
    int w = 0, h = 0;
    switch (plane) {
        case Plane::axial: w = g.dims[0]; h = g.dims[1]; break;
        case Plane::coronal: w = g.dims[0]; h = g.dims[2]; break;
        case Plane::sagittal: w = g.dims[1]; h = g.dims[2]; break;
    }
    const int fixed_n = plane == Plane::axial ? g.dims[2]
                        : plane == Plane::coronal ? g.dims[1]
                                                  : g.dims[0];
    if (index < 0 || index >= fixed_n)
        throw ConfigError("dft_magnitude_slice: slice index out of range");

    std::vector<std::complex<double>> m((size_t)w * h);
    for (int j = 0; j < h; ++j)
        for (int i = 0; i < w; ++i) {
            int ix = 0, iy = 0, iz = 0;
            switch (plane) {
                case Plane::axial: ix = i; iy = j; iz = index; break;
                case Plane::coronal: ix = i; iy = index; iz = j; break;
                case Plane::sagittal: ix = index; iy = i; iz = j; break;
            }
            m[(size_t)j * w + i] = (double)vol.v[(size_t)vol_index(g, ix, iy, iz)];
        }

    std::vector<std::complex<double>> line;
    for (int j = 0; j < h; ++j) {
        line.assign(m.begin() + (size_t)j * w, m.begin() + (size_t)(j + 1) * w);
        line = fourier(std::move(line), false);
        std::copy(line.begin(), line.end(), m.begin() + (size_t)j * w);
    }
    for (int i = 0; i < w; ++i) {
        line.resize(h);
        for (int j = 0; j < h; ++j) line[j] = m[(size_t)j * w + i];
        line = fourier(std::move(line), false);
        for (int j = 0; j < h; ++j) m[(size_t)j * w + i] = line[j];
    }

    PlaneImage out;
    out.w = w;
    out.h = h;
    out.v.resize((size_t)w * h);
    for (int j = 0; j < h; ++j)
        for (int i = 0; i < w; ++i) {
            const int si = (i + w - w / 2) % w;
            const int sj = (j + h - h / 2) % h;
            out.v[(size_t)j * w + i] =
                (float)std::log1p(std::abs(m[(size_t)sj * w + si]));
        }
    return out;
}

}  // namespace lsirt::metrics
