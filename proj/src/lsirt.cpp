#include "lsirt/lsirt.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <span>
#include <string>
#include <utility>

#include "lsirt/errors.hpp"
#include "lsirt/parallel.hpp"

namespace lsirt {
namespace {

constexpr int kMargin = 3;  // receptive radius of the three stacked 3-tap convs

// Independent seed for batch element #counter of a training run.
std::uint64_t element_seed(std::uint64_t seed, std::uint64_t counter) {
    const auto blk = philox_block(seed, rng_stream::kElem, counter);
    return (static_cast<std::uint64_t>(blk[1]) << 32) | blk[0];
}

// Copies a len-sized box from src at so to dst at do_ (row-major x-fastest).
void copy_box(const float* src, const std::array<int, 3>& sdims, const std::array<int, 3>& so,
              float* dst, const std::array<int, 3>& ddims, const std::array<int, 3>& do_,
              const std::array<int, 3>& len) {
    for (int z = 0; z < len[2]; ++z)
        for (int y = 0; y < len[1]; ++y) {
            const float* s = src +
                ((std::int64_t)(so[2] + z) * sdims[1] + (so[1] + y)) * sdims[0] + so[0];
            float* d = dst +
                ((std::int64_t)(do_[2] + z) * ddims[1] + (do_[1] + y)) * ddims[0] + do_[0];
            std::memcpy(d, s, sizeof(float) * (size_t)len[0]);
        }
}

nn::Tensor<float> crop_tensor(const nn::Tensor<float>& t, const std::array<int, 3>& o,
                              const std::array<int, 3>& len) {
    auto out = nn::make_tensor<float>(t.ndim, len[0], len[1], len[2], t.channels);
    const std::array<int, 3> sdims{t.dims[0], t.dims[1], t.dims[2]};
    for (int c = 0; c < t.channels; ++c)
        copy_box(t.channel(c), sdims, o, out.channel(c), len, {0, 0, 0}, len);
    return out;
}

std::vector<float> crop_volume(const Volume& v, const std::array<int, 3>& o,
                               const std::array<int, 3>& len) {
    std::vector<float> out((size_t)len[0] * len[1] * len[2]);
    const std::array<int, 3> sdims{v.grid.dims[0], v.grid.dims[1], v.grid.dims[2]};
    copy_box(v.v.data(), sdims, o, out.data(), len, {0, 0, 0}, len);
    return out;
}

void advance(BatchElement& el, StepResult&& r) {
    el.h = std::move(el.x);
    el.x = std::move(r.x_next);
    ++el.age;
}

}  // namespace

void validate(const LsirtConfig& cfg) {
    if (!(cfg.alpha >= 0.0 && cfg.alpha <= 1.0))
        throw ConfigError("lsirt: alpha must lie in [0, 1]");
    if (cfg.n_warmup < 0) throw ConfigError("lsirt: n_warmup must be >= 0");
    if (cfg.n_total <= cfg.n_warmup)
        throw ConfigError("lsirt: n_total must exceed n_warmup");
    if (cfg.batch_size < 1) throw ConfigError("lsirt: batch_size must be >= 1");
    if (cfg.n_train_steps < 0) throw ConfigError("lsirt: n_train_steps must be >= 0");
    if (!(cfg.omega >= 0.0)) throw ConfigError("lsirt: omega must be >= 0");
    if (!(cfg.noise_variance >= 0.0)) throw ConfigError("lsirt: noise_variance must be >= 0");
    const bool patch = cfg.patch != std::array<int, 3>{0, 0, 0};
    if (patch)
        for (int a = 0; a < 3; ++a)
            if (cfg.patch[a] < 3)
                throw ConfigError("lsirt: patch size must be >= 3 per axis");
    if (cfg.lr_schedule.empty()) throw ConfigError("lsirt: lr_schedule must be non-empty");
    if (cfg.lr_schedule.front().frac != 0.0 || cfg.lr_schedule.back().frac != 1.0)
        throw ConfigError("lsirt: lr_schedule must start at frac 0 and end at frac 1");
    double prev = 0.0;
    for (const auto& k : cfg.lr_schedule) {
        if (!(k.frac >= prev) || k.frac > 1.0)
            throw ConfigError("lsirt: lr_schedule fractions must be non-decreasing in [0, 1]");
        if (!(k.lr >= 0.0) || !std::isfinite(k.lr))
            throw ConfigError("lsirt: lr_schedule rates must be finite and >= 0");
        prev = k.frac;
    }
}

double lr_at(const LsirtConfig& cfg, double f) {
    const auto& ks = cfg.lr_schedule;
    f = std::clamp(f, 0.0, 1.0);
    if (f <= ks.front().frac) return ks.front().lr;
    for (size_t i = 1; i < ks.size(); ++i) {
        if (f <= ks[i].frac) {
            const double span = ks[i].frac - ks[i - 1].frac;
            if (span <= 0.0) return ks[i].lr;
            const double w = (f - ks[i - 1].frac) / span;
            return ks[i - 1].lr + w * (ks[i].lr - ks[i - 1].lr);
        }
    }
    return ks.back().lr;
}

ProceduralDataset::ProceduralDataset(Family family, GridSpec grid, std::uint64_t base_seed,
                                     std::int64_t count)
    : family_(family), grid_(grid), seed_(base_seed), count_(count) {
    validate(grid_);
    if (count_ < 1) throw ConfigError("ProceduralDataset: count must be >= 1");
    if (family_ == Family::triangles && grid_.ndim != 2)
        throw ConfigError("ProceduralDataset: triangles require a 2D grid");
    if (family_ == Family::ellipsoids && grid_.ndim != 3)
        throw ConfigError("ProceduralDataset: ellipsoids require a 3D grid");
}

Volume ProceduralDataset::get(std::int64_t index) const {
    if (index < 0 || index >= count_)
        throw ConfigError("ProceduralDataset: index out of range");
    const std::uint64_t s = seed_ + (std::uint64_t)index;
    return family_ == Family::triangles ? phantoms::triangles(s, grid_)
                                        : phantoms::ellipsoids(s, grid_);
}

StepResult lsirt_step(const Volume& x, const Volume& h, const Sinogram& y,
                      const nn::Model<float>& model, const SirtScaling& sc, double alpha,
                      nn::Tape<float>* tape, nn::Tensor<float>* input_out) {
    if (!(alpha >= 0.0 && alpha <= 1.0))
        throw ConfigError("lsirt_step: alpha must lie in [0, 1]");
    check_same_shape(x, h, "lsirt_step");
    if (model.ndim != x.grid.ndim)
        throw ShapeError("lsirt_step: model dimensionality does not match the grid");
    if (model.c_in != 1 && model.c_in != 3)
        throw ConfigError("lsirt_step: model must take 1 or 3 input channels");
    if (model.c_out != 1 && model.c_out != 2)
        throw ConfigError("lsirt_step: model must produce 1 or 2 output channels");

    Volume p = scaled_gradient(x, y, sc);
    const auto& d = x.grid.dims;
    auto in = nn::make_tensor<float>(x.grid.ndim, d[0], d[1], d[2], model.c_in);
    const size_t nbytes = x.v.size() * sizeof(float);
    std::memcpy(in.channel(0), x.v.data(), nbytes);
    if (model.c_in == 3) {
        std::memcpy(in.channel(1), h.v.data(), nbytes);
        std::memcpy(in.channel(2), p.v.data(), nbytes);
    }

    StepResult r{make_volume(x.grid), nn::model_forward(model, in, tape)};
    const float a = (float)alpha;
    const float b = 1.0f - a;
    const float* g0 = r.gamma.channel(0);
    const std::int64_t n = (std::int64_t)x.v.size();
    parallel_for(n, [&](std::int64_t lo, std::int64_t hi) {
        for (std::int64_t j = lo; j < hi; ++j)
            r.x_next.v[j] = (b * x.v[j] + a * g0[j]) + p.v[j];
    });
    for (std::int64_t j = 0; j < n; ++j)
        if (!std::isfinite(r.x_next.v[j]))
            throw NumericError("lsirt_step: non-finite iterate");
    if (input_out) *input_out = std::move(in);
    return r;
}

BatchElement create_batch_element(const Dataset& ds, const Geometry& geo,
                                  const nn::Model<float>& model, const SirtScaling& sc,
                                  const LsirtConfig& cfg, std::uint64_t seed) {
    validate(cfg);
    if (ds.size() < 1) throw ConfigError("create_batch_element: dataset is empty");
    RandomStream rs(seed, rng_stream::kData);
    const auto idx = (std::int64_t)rs.uniform_index((std::uint64_t)ds.size());
    const std::uint64_t noise_seed = rs.next_u64();

    BatchElement el;
    el.t = ds.get(idx);
    el.y = phantoms::add_noise(forward_project(el.t, geo), cfg.noise_variance, noise_seed);
    el.x = make_volume(el.t.grid);
    el.h = make_volume(el.t.grid);
    for (int k = 0; k < cfg.n_warmup; ++k)
        advance(el, lsirt_step(el.x, el.h, el.y, model, sc, cfg.alpha));
    return el;
}

int replacement_slot(RandomStream& rs, const LsirtConfig& cfg) {
    const double p =
        std::min(1.0, (double)cfg.batch_size / (double)(cfg.n_total - cfg.n_warmup));
    if (rs.uniform() >= p) return -1;
    return (int)rs.uniform_index((std::uint64_t)cfg.batch_size);
}

nn::Model<float> train(const Dataset& ds, const Geometry& geo, const GridSpec& grid,
                       const LsirtConfig& cfg, std::uint64_t seed,
                       const TrainCallback& callback) {
    validate(cfg);
    validate(grid);
    validate(geo);
    if (grid.ndim != geometry_ndim(geo))
        throw ShapeError("train: grid dimensionality does not match geometry");
    if (ds.size() < 1) throw ConfigError("train: dataset is empty");
    const bool patch_mode = cfg.patch != std::array<int, 3>{0, 0, 0};
    if (patch_mode) {
        if (grid.ndim != 3) throw ConfigError("train: patch training requires a 3D grid");
        for (int a = 0; a < 3; ++a) {
            if (cfg.patch[a] > grid.dims[a])
                throw ConfigError("train: patch size exceeds the grid");
            if (grid.dims[a] % cfg.patch[a] != 0)
                throw ConfigError("train: grid dims must be divisible by the patch size");
        }
    }

    const int c_in = cfg.star ? 1 : 3;
    const int c_out = cfg.star ? 1 : 2;
    const double omega = cfg.star ? 0.0 : cfg.omega;
    auto model = nn::make_model<float>(grid.ndim, c_in, c_out);
    nn::kaiming_init(model, seed);
    if (cfg.n_train_steps == 0) return model;

    const SirtScaling sc = sirt_scalings(geo, grid);
    RandomStream rs(seed, rng_stream::kTrain);
    std::uint64_t elem_counter = 0;
    auto fresh = [&] {
        return create_batch_element(ds, geo, model, sc, cfg, element_seed(seed, elem_counter++));
    };

    std::vector<BatchElement> batch;
    batch.reserve((size_t)cfg.batch_size);
    for (int i = 0; i < cfg.batch_size; ++i) batch.push_back(fresh());

    auto grads = nn::make_model<float>(grid.ndim, c_in, c_out);
    auto adam = nn::make_adam(model);
    const float inv_b = 1.0f / (float)cfg.batch_size;

    for (std::int64_t step = 0; step < cfg.n_train_steps; ++step) {
        const double lr = lr_at(cfg, (double)step / (double)cfg.n_train_steps);
        double loss = 0.0;
        int slot = -1;
        try {
            slot = replacement_slot(rs, cfg);
            if (slot >= 0) batch[(size_t)slot] = fresh();

            nn::for_each_param(grads, [](std::span<float> s) {
                std::fill(s.begin(), s.end(), 0.0f);
            });
            for (auto& el : batch) {
                if (!patch_mode) {
                    nn::Tape<float> tape;
                    StepResult r = lsirt_step(el.x, el.h, el.y, model, sc, cfg.alpha, &tape);
                    auto lg = nn::loss_and_grad(r.gamma, el.x.v, el.t.v, omega);
                    loss += lg.loss / cfg.batch_size;
                    for (auto& v : lg.grad.v) v *= inv_b;
                    nn::model_backward(model, tape, lg.grad, grads);
                    advance(el, std::move(r));
                } else {
                    std::array<int, 3> org, w0, wlen, po;
                    for (int a = 0; a < 3; ++a) {
                        const int npos = grid.dims[a] / cfg.patch[a];
                        org[a] = cfg.patch[a] * (int)rs.uniform_index((std::uint64_t)npos);
                        w0[a] = std::max(0, org[a] - kMargin);
                        const int w1 = std::min(grid.dims[a], org[a] + cfg.patch[a] + kMargin);
                        wlen[a] = w1 - w0[a];
                        po[a] = org[a] - w0[a];
                    }
                    nn::Tensor<float> input;
                    StepResult r = lsirt_step(el.x, el.h, el.y, model, sc, cfg.alpha,
                                              nullptr, &input);
                    const auto win = crop_tensor(input, w0, wlen);
                    nn::Tape<float> tape;
                    auto gwin = nn::model_forward(model, win, &tape);
                    auto gpatch = crop_tensor(gwin, po, cfg.patch);
                    auto lg = nn::loss_and_grad(gpatch, crop_volume(el.x, org, cfg.patch),
                                                crop_volume(el.t, org, cfg.patch), omega);
                    loss += lg.loss / cfg.batch_size;
                    for (auto& v : lg.grad.v) v *= inv_b;
                    auto dwin = nn::make_tensor<float>(3, wlen[0], wlen[1], wlen[2], c_out);
                    for (int c = 0; c < c_out; ++c)
                        copy_box(lg.grad.channel(c), cfg.patch, {0, 0, 0},
                                 dwin.channel(c), wlen, po, cfg.patch);
                    nn::model_backward(model, tape, dwin, grads);
                    advance(el, std::move(r));
                }
            }
            nn::adam_step(model, grads, adam, (float)lr);
        } catch (const NumericError& e) {
            throw NumericError("train: step " + std::to_string(step) + ": " + e.what());
        }
        if (callback) callback(TrainStepInfo{step, loss, lr, slot}, model);
    }
    return model;
}

Volume reconstruct(const Sinogram& y, const GridSpec& grid, const nn::Model<float>& model,
                   const LsirtConfig& cfg, const SnapshotCallback& snapshot) {
    validate(cfg);
    validate(grid);
    validate(y.geo);
    if (grid.ndim != geometry_ndim(y.geo))
        throw ShapeError("reconstruct: grid dimensionality does not match geometry");
    if (model.ndim != grid.ndim)
        throw ShapeError("reconstruct: model dimensionality does not match the grid");

    const SirtScaling sc = sirt_scalings(y.geo, grid);
    Volume x = make_volume(grid);
    Volume h = make_volume(grid);
    for (int k = 1; k <= cfg.n_total; ++k) {
        StepResult r = lsirt_step(x, h, y, model, sc, cfg.alpha);
        h = std::move(x);
        x = std::move(r.x_next);
        if (snapshot) snapshot(k, x);
    }
    return x;
}

nn::Tensor<float> apply_tiled(const nn::Model<float>& model, const nn::Tensor<float>& input,
                              std::array<int, 3> tile, int margin) {
    if (margin < kMargin)
        throw ConfigError("apply_tiled: margin must be >= 3, the network's receptive radius");
    if (input.ndim != model.ndim)
        throw ShapeError("apply_tiled: input dimensionality does not match the model");
    if (input.channels != model.c_in)
        throw ShapeError("apply_tiled: input channels do not match the model");
    const int na = input.ndim;
    const std::array<int, 3> dims{input.dims[0], input.dims[1], input.dims[2]};
    std::array<int, 3> core{dims[0], dims[1], dims[2]};
    for (int a = 0; a < na; ++a) {
        if (tile[a] < 2 * margin + 1)
            throw ConfigError("apply_tiled: tile must be >= 2*margin + 1 per axis");
        core[a] = tile[a] - 2 * margin;
    }

    auto out = nn::make_tensor<float>(input.ndim, dims[0], dims[1], dims[2], model.c_out);
    for (int cz = 0; cz < dims[2]; cz += core[2])
        for (int cy = 0; cy < dims[1]; cy += core[1])
            for (int cx = 0; cx < dims[0]; cx += core[0]) {
                const std::array<int, 3> c0{cx, cy, cz};
                std::array<int, 3> clen, w0, wlen;
                for (int a = 0; a < 3; ++a) {
                    const int c1 = std::min(dims[a], c0[a] + core[a]);
                    clen[a] = c1 - c0[a];
                    w0[a] = a < na ? std::max(0, c0[a] - margin) : c0[a];
                    const int w1 = a < na ? std::min(dims[a], c1 + margin) : c1;
                    wlen[a] = w1 - w0[a];
                }
                const auto tin = crop_tensor(input, w0, wlen);
                const auto tout = nn::model_forward(model, tin);
                std::array<int, 3> po;
                for (int a = 0; a < 3; ++a) po[a] = c0[a] - w0[a];
                for (int c = 0; c < model.c_out; ++c)
                    copy_box(tout.channel(c), wlen, po, out.channel(c), dims, c0, clen);
            }
    return out;
}

}  // namespace lsirt
