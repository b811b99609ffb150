#include "lsirt/nn.hpp"

#include <cmath>
#include <cstring>

#include "lsirt/parallel.hpp"
#include "lsirt/random.hpp"

namespace lsirt::nn {

namespace {

constexpr double kLossClamp = 1e-12;

struct Tap {
    int tz, ty, tx;
};

// tap t for 2D is (ty+1)*3 + (tx+1); 3D prepends tz. Matches the weight layout.
inline int tap_count(int ndim) { return ndim == 2 ? 9 : 27; }

inline Tap tap_at(int ndim, int t) {
    if (ndim == 2) return {0, t / 3 - 1, t % 3 - 1};
    return {t / 9 - 1, (t / 3) % 3 - 1, t % 3 - 1};
}

// fixed-order dot with eight accumulators; vectorizes without reassociation
template <class T>
T dot8(const T* a, const T* b, int n) {
    T acc[8] = {};
    int k = 0;
    for (; k + 8 <= n; k += 8)
        for (int u = 0; u < 8; ++u) acc[u] += a[k + u] * b[k + u];
    for (int u = 0; k < n; ++k, ++u) acc[u] += a[k] * b[k];
    T s = 0;
    for (int u = 0; u < 8; ++u) s += acc[u];
    return s;
}

template <class T>
T sum8(const T* a, int n) {
    T acc[8] = {};
    int k = 0;
    for (; k + 8 <= n; k += 8)
        for (int u = 0; u < 8; ++u) acc[u] += a[k + u];
    for (int u = 0; k < n; ++k, ++u) acc[u] += a[k];
    T s = 0;
    for (int u = 0; u < 8; ++u) s += acc[u];
    return s;
}

template <class T>
void conv_forward(const ConvLayer<T>& L, const Tensor<T>& in, Tensor<T>& out) {
    const int nx = in.dims[0], ny = in.dims[1], nz = in.dims[2];
    const int kvol = L.kernel_volume();
    parallel_for(L.c_out, [&](std::int64_t o0, std::int64_t o1) {
        for (std::int64_t o = o0; o < o1; ++o) {
            T* dst = out.channel((int)o);
            std::fill(dst, dst + in.n_spatial(), L.b[o]);
            for (int i = 0; i < L.c_in; ++i) {
                const T* src = in.channel(i);
                for (int t = 0; t < kvol; ++t) {
                    const T wv = L.w[(o * L.c_in + i) * kvol + t];
                    const Tap tp = tap_at(L.ndim, t);
                    const int z0 = std::max(0, -tp.tz), z1 = nz - 1 - std::max(0, tp.tz);
                    const int y0 = std::max(0, -tp.ty), y1 = ny - 1 - std::max(0, tp.ty);
                    const int x0 = std::max(0, -tp.tx), x1 = nx - 1 - std::max(0, tp.tx);
                    for (int z = z0; z <= z1; ++z)
                        for (int y = y0; y <= y1; ++y) {
                            T* drow = dst + ((std::int64_t)z * ny + y) * nx;
                            const T* srow =
                                src + ((std::int64_t)(z + tp.tz) * ny + (y + tp.ty)) * nx + tp.tx;
                            for (int x = x0; x <= x1; ++x) drow[x] += wv * srow[x];
                        }
                }
            }
        }
    });
}

// gradient w.r.t. the convolution input
template <class T>
void conv_backward_x(const ConvLayer<T>& L, const Tensor<T>& dout, Tensor<T>& din) {
    const int nx = din.dims[0], ny = din.dims[1], nz = din.dims[2];
    const int kvol = L.kernel_volume();
    parallel_for(L.c_in, [&](std::int64_t i0, std::int64_t i1) {
        for (std::int64_t i = i0; i < i1; ++i) {
            T* dst = din.channel((int)i);
            std::fill(dst, dst + din.n_spatial(), T(0));
            for (int o = 0; o < L.c_out; ++o) {
                const T* src = dout.channel(o);
                for (int t = 0; t < kvol; ++t) {
                    const T wv = L.w[(o * L.c_in + i) * kvol + t];
                    const Tap tp = tap_at(L.ndim, t);
                    const int z0 = std::max(0, -tp.tz), z1 = nz - 1 - std::max(0, tp.tz);
                    const int y0 = std::max(0, -tp.ty), y1 = ny - 1 - std::max(0, tp.ty);
                    const int x0 = std::max(0, -tp.tx), x1 = nx - 1 - std::max(0, tp.tx);
                    for (int z = z0; z <= z1; ++z)
                        for (int y = y0; y <= y1; ++y) {
                            T* drow =
                                dst + ((std::int64_t)(z + tp.tz) * ny + (y + tp.ty)) * nx + tp.tx;
                            const T* srow = src + ((std::int64_t)z * ny + y) * nx;
                            for (int x = x0; x <= x1; ++x) drow[x] += wv * srow[x];
                        }
                }
            }
        }
    });
}

// gradients w.r.t. weights and biases, accumulated into gw/gb
template <class T>
void conv_backward_w(const ConvLayer<T>& L, const Tensor<T>& in, const Tensor<T>& dout,
                     ConvLayer<T>& grad) {
    const int nx = in.dims[0], ny = in.dims[1], nz = in.dims[2];
    const int kvol = L.kernel_volume();
    parallel_for(L.c_out, [&](std::int64_t o0, std::int64_t o1) {
        for (std::int64_t o = o0; o < o1; ++o) {
            const T* src = dout.channel((int)o);
            grad.b[o] += sum8(src, (int)in.n_spatial());
            for (int i = 0; i < L.c_in; ++i) {
                const T* xin = in.channel(i);
                for (int t = 0; t < kvol; ++t) {
                    const Tap tp = tap_at(L.ndim, t);
                    const int z0 = std::max(0, -tp.tz), z1 = nz - 1 - std::max(0, tp.tz);
                    const int y0 = std::max(0, -tp.ty), y1 = ny - 1 - std::max(0, tp.ty);
                    const int x0 = std::max(0, -tp.tx), x1 = nx - 1 - std::max(0, tp.tx);
                    T acc = 0;
                    for (int z = z0; z <= z1; ++z)
                        for (int y = y0; y <= y1; ++y) {
                            const T* drow = src + ((std::int64_t)z * ny + y) * nx;
                            const T* xrow =
                                xin + ((std::int64_t)(z + tp.tz) * ny + (y + tp.ty)) * nx + tp.tx;
                            acc += dot8(drow + x0, xrow + x0, x1 - x0 + 1);
                        }
                    grad.w[(o * L.c_in + i) * kvol + t] += acc;
                }
            }
        }
    });
}

template <class T>
void prelu_forward(const PReLU<T>& act, const Tensor<T>& pre, Tensor<T>& out) {
    const std::int64_t nsp = pre.n_spatial();
    parallel_for(pre.channels, [&](std::int64_t c0, std::int64_t c1) {
        for (std::int64_t c = c0; c < c1; ++c) {
            const T s = act.slope[c];
            const T* p = pre.channel((int)c);
            T* q = out.channel((int)c);
            for (std::int64_t k = 0; k < nsp; ++k) q[k] = p[k] >= 0 ? p[k] : s * p[k];
        }
    });
}

template <class T>
void prelu_backward(const PReLU<T>& act, const Tensor<T>& pre, const Tensor<T>& dout,
                    Tensor<T>& dpre, std::vector<T>& dslope) {
    const std::int64_t nsp = pre.n_spatial();
    parallel_for(pre.channels, [&](std::int64_t c0, std::int64_t c1) {
        for (std::int64_t c = c0; c < c1; ++c) {
            const T s = act.slope[c];
            const T* p = pre.channel((int)c);
            const T* g = dout.channel((int)c);
            T* q = dpre.channel((int)c);
            T acc = 0;
            for (std::int64_t k = 0; k < nsp; ++k) {
                if (p[k] >= 0) {
                    q[k] = g[k];
                } else {
                    q[k] = s * g[k];
                    acc += p[k] * g[k];
                }
            }
            dslope[c] += acc;
        }
    });
}

template <class T>
void check_conv_shapes(const ConvLayer<T>& a, const ConvLayer<T>& b) {
    if (a.ndim != b.ndim || a.w.size() != b.w.size() || a.b.size() != b.b.size())
        throw ShapeError("model_backward: gradient shape does not match the model");
}

}  // namespace

template <class T>
Tensor<T> make_tensor(int ndim, int nx, int ny, int nz, int channels) {
    if (ndim != 2 && ndim != 3) throw ConfigError("tensor dimensionality must be 2 or 3");
    if (ndim == 2 && nz != 1) throw ConfigError("2D tensors require nz == 1");
    if (nx < 1 || ny < 1 || nz < 1 || channels < 1)
        throw ConfigError("tensor dims and channel count must be positive");
    Tensor<T> t;
    t.ndim = ndim;
    t.dims[0] = nx;
    t.dims[1] = ny;
    t.dims[2] = nz;
    t.channels = channels;
    t.v.assign((std::int64_t)channels * nx * ny * nz, T(0));
    return t;
}

namespace {

template <class T>
ConvLayer<T> make_conv(int ndim, int c_in, int c_out) {
    ConvLayer<T> L;
    L.ndim = ndim;
    L.c_in = c_in;
    L.c_out = c_out;
    L.w.assign((std::size_t)c_out * c_in * L.kernel_volume(), T(0));
    L.b.assign(c_out, T(0));
    return L;
}

}  // namespace

template <class T>
Model<T> make_model(int ndim, int c_in, int c_out) {
    if (ndim != 2 && ndim != 3) throw ConfigError("model dimensionality must be 2 or 3");
    if (c_in < 1 || c_out < 1) throw ConfigError("model channel counts must be positive");
    Model<T> m;
    m.ndim = ndim;
    m.c_in = c_in;
    m.c_out = c_out;
    m.conv1 = make_conv<T>(ndim, c_in, 32);
    m.act1.slope.assign(32, T(0));
    m.conv2 = make_conv<T>(ndim, 32, 32);
    m.act2.slope.assign(32, T(0));
    m.head = make_conv<T>(ndim, 32, c_out);
    return m;
}

template <class T>
std::int64_t param_count(const Model<T>& m) {
    std::int64_t n = 0;
    for_each_param(m, [&](std::span<const T> p) { n += (std::int64_t)p.size(); });
    return n;
}

template <class T>
void kaiming_init(Model<T>& m, std::uint64_t seed) {
    RandomStream rs(seed, rng_stream::kInit);
    for (ConvLayer<T>* L : {&m.conv1, &m.conv2, &m.head}) {
        const double scale = std::sqrt(2.0 / (L->kernel_volume() * L->c_in));
        for (T& w : L->w) w = (T)(rs.normal() * scale);
        std::fill(L->b.begin(), L->b.end(), T(0));
    }
    std::fill(m.act1.slope.begin(), m.act1.slope.end(), T(0.25));
    std::fill(m.act2.slope.begin(), m.act2.slope.end(), T(0.25));
}

template <class T>
Tensor<T> model_forward(const Model<T>& m, const Tensor<T>& in, Tape<T>* tape) {
    if (in.ndim != m.ndim || in.channels != m.c_in)
        throw ShapeError("model_forward: input dimensionality/channels do not match the model");
    for (int a = 0; a < m.ndim; ++a)
        if (in.dims[a] < 3) throw ShapeError("model_forward: spatial dims must be >= 3");

    const int nx = in.dims[0], ny = in.dims[1], nz = in.dims[2];
    Tensor<T> pre1 = make_tensor<T>(m.ndim, nx, ny, nz, 32);
    conv_forward(m.conv1, in, pre1);
    Tensor<T> out1 = make_tensor<T>(m.ndim, nx, ny, nz, 32);
    prelu_forward(m.act1, pre1, out1);
    Tensor<T> pre2 = make_tensor<T>(m.ndim, nx, ny, nz, 32);
    conv_forward(m.conv2, out1, pre2);
    Tensor<T> out2 = make_tensor<T>(m.ndim, nx, ny, nz, 32);
    prelu_forward(m.act2, pre2, out2);
    Tensor<T> out = make_tensor<T>(m.ndim, nx, ny, nz, m.c_out);
    conv_forward(m.head, out2, out);

    if (tape) {
        tape->input = in;
        tape->pre1 = std::move(pre1);
        tape->out1 = std::move(out1);
        tape->pre2 = std::move(pre2);
        tape->out2 = std::move(out2);
        tape->used = false;
    }
    return out;
}

template <class T>
Tensor<T> model_backward(const Model<T>& m, Tape<T>& tape, const Tensor<T>& out_grad,
                         Model<T>& grads) {
    if (tape.used) throw InvalidStateError("model_backward: tape already consumed");
    if (tape.input.v.empty()) throw InvalidStateError("model_backward: tape has no forward pass");
    tape.used = true;
    if (out_grad.channels != m.c_out || out_grad.n_spatial() != tape.input.n_spatial())
        throw ShapeError("model_backward: output gradient shape mismatch");
    check_conv_shapes(m.conv1, grads.conv1);
    check_conv_shapes(m.conv2, grads.conv2);
    check_conv_shapes(m.head, grads.head);
    if (grads.act1.slope.size() != m.act1.slope.size() ||
        grads.act2.slope.size() != m.act2.slope.size())
        throw ShapeError("model_backward: gradient shape does not match the model");

    const int nx = tape.input.dims[0], ny = tape.input.dims[1], nz = tape.input.dims[2];
    conv_backward_w(m.head, tape.out2, out_grad, grads.head);
    Tensor<T> dout2 = make_tensor<T>(m.ndim, nx, ny, nz, 32);
    conv_backward_x(m.head, out_grad, dout2);

    Tensor<T> dpre2 = make_tensor<T>(m.ndim, nx, ny, nz, 32);
    prelu_backward(m.act2, tape.pre2, dout2, dpre2, grads.act2.slope);

    conv_backward_w(m.conv2, tape.out1, dpre2, grads.conv2);
    Tensor<T> dout1 = make_tensor<T>(m.ndim, nx, ny, nz, 32);
    conv_backward_x(m.conv2, dpre2, dout1);

    Tensor<T> dpre1 = make_tensor<T>(m.ndim, nx, ny, nz, 32);
    prelu_backward(m.act1, tape.pre1, dout1, dpre1, grads.act1.slope);

    conv_backward_w(m.conv1, tape.input, dpre1, grads.conv1);
    Tensor<T> din = make_tensor<T>(m.ndim, nx, ny, nz, m.c_in);
    conv_backward_x(m.conv1, dpre1, din);
    return din;
}

template <class T>
AdamState<T> make_adam(const Model<T>& m) {
    AdamState<T> s;
    s.m.assign(param_count(m), T(0));
    s.v.assign(param_count(m), T(0));
    return s;
}

template <class T>
void adam_step(Model<T>& params, const Model<T>& grads, AdamState<T>& state, T lr) {
    std::vector<std::span<T>> ps;
    for_each_param(params, [&](std::span<T> p) { ps.push_back(p); });
    std::vector<std::span<const T>> gs;
    for_each_param(grads, [&](std::span<const T> g) { gs.push_back(g); });
    std::int64_t total = 0;
    for (std::size_t a = 0; a < ps.size(); ++a) {
        if (ps[a].size() != gs[a].size())
            throw ShapeError("adam_step: gradient shape does not match the parameters");
        total += (std::int64_t)ps[a].size();
    }
    if (total != (std::int64_t)state.m.size())
        throw ShapeError("adam_step: optimizer state does not match the parameters");

    constexpr double beta1 = 0.9, beta2 = 0.99, eps = 1e-8;
    state.step += 1;
    const double bc1 = 1.0 - std::pow(beta1, (double)state.step);
    const double bc2 = 1.0 - std::pow(beta2, (double)state.step);

    std::int64_t k = 0;
    for (std::size_t a = 0; a < ps.size(); ++a) {
        std::span<T> p = ps[a];
        std::span<const T> g = gs[a];
        for (std::size_t j = 0; j < p.size(); ++j, ++k) {
            const T gj = g[j];
            if (!std::isfinite((double)gj))
                throw NumericError("adam_step: non-finite gradient");
            state.m[k] = (T)(beta1 * state.m[k] + (1.0 - beta1) * gj);
            state.v[k] = (T)(beta2 * state.v[k] + (1.0 - beta2) * gj * gj);
            const double mhat = state.m[k] / bc1;
            const double vhat = state.v[k] / bc2;
            p[j] -= (T)(lr * mhat / (std::sqrt(vhat) + eps));
        }
    }
}

template <class T>
LossGrad<T> loss_and_grad(const Tensor<T>& gamma, const std::vector<T>& x,
                          const std::vector<T>& t, double omega) {
    const std::int64_t nsp = gamma.n_spatial();
    if (gamma.channels != 1 && gamma.channels != 2)
        throw ShapeError("loss_and_grad: gamma must have 1 or 2 channels");
    if ((std::int64_t)x.size() != nsp || (std::int64_t)t.size() != nsp)
        throw ShapeError("loss_and_grad: x/t size does not match gamma");
    if (gamma.channels == 1 && omega != 0.0)
        throw ConfigError("loss_and_grad: single-channel gamma requires omega == 0");

    const T* g0 = gamma.channel(0);
    double arg = 0.0;
    for (std::int64_t k = 0; k < nsp; ++k) {
        const double d = (double)g0[k] - t[k];
        arg += d * d;
    }
    if (gamma.channels == 2) {
        const T* g1 = gamma.channel(1);
        double s = 0.0;
        for (std::int64_t k = 0; k < nsp; ++k) {
            const double d = (double)g1[k] - ((double)t[k] - x[k]);
            s += d * d;
        }
        arg += omega * s;
    }

    LossGrad<T> r;
    r.grad = make_tensor<T>(gamma.ndim, gamma.dims[0], gamma.dims[1], gamma.dims[2],
                            gamma.channels);
    if (arg <= kLossClamp) {
        r.loss = std::log(kLossClamp);
        return r;
    }
    r.loss = std::log(arg);
    T* d0 = r.grad.channel(0);
    for (std::int64_t k = 0; k < nsp; ++k) d0[k] = (T)(2.0 * ((double)g0[k] - t[k]) / arg);
    if (gamma.channels == 2) {
        const T* g1 = gamma.channel(1);
        T* d1 = r.grad.channel(1);
        for (std::int64_t k = 0; k < nsp; ++k)
            d1[k] = (T)(2.0 * omega * ((double)g1[k] - ((double)t[k] - x[k])) / arg);
    }
    return r;
}

template Tensor<float> make_tensor<float>(int, int, int, int, int);
template Tensor<double> make_tensor<double>(int, int, int, int, int);
template Model<float> make_model<float>(int, int, int);
template Model<double> make_model<double>(int, int, int);
template std::int64_t param_count<float>(const Model<float>&);
template std::int64_t param_count<double>(const Model<double>&);
template void kaiming_init<float>(Model<float>&, std::uint64_t);
template void kaiming_init<double>(Model<double>&, std::uint64_t);
template Tensor<float> model_forward<float>(const Model<float>&, const Tensor<float>&,
                                            Tape<float>*);
template Tensor<double> model_forward<double>(const Model<double>&, const Tensor<double>&,
                                              Tape<double>*);
template Tensor<float> model_backward<float>(const Model<float>&, Tape<float>&,
                                             const Tensor<float>&, Model<float>&);
template Tensor<double> model_backward<double>(const Model<double>&, Tape<double>&,
                                               const Tensor<double>&, Model<double>&);
template AdamState<float> make_adam<float>(const Model<float>&);
template AdamState<double> make_adam<double>(const Model<double>&);
template void adam_step<float>(Model<float>&, const Model<float>&, AdamState<float>&, float);
template void adam_step<double>(Model<double>&, const Model<double>&, AdamState<double>&, double);
template LossGrad<float> loss_and_grad<float>(const Tensor<float>&, const std::vector<float>&,
                                              const std::vector<float>&, double);
template LossGrad<double> loss_and_grad<double>(const Tensor<double>&, const std::vector<double>&,
                                                const std::vector<double>&, double);

}  // namespace lsirt::nn
