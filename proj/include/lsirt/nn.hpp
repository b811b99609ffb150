#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "lsirt/errors.hpp"

namespace lsirt::nn {

/// Multi-channel image/volume, channel-major: v[(c * nz*ny + iz*ny + iy) * nx + ix].
/// 2D tensors have nz == 1 and ndim == 2.
template <class T>
struct Tensor {
    int ndim = 2;
    int dims[3] = {1, 1, 1};
    int channels = 1;
    std::vector<T> v;

    std::int64_t n_spatial() const {
        return (std::int64_t)dims[0] * dims[1] * dims[2];
    }
    T* channel(int c) { return v.data() + (std::int64_t)c * n_spatial(); }
    const T* channel(int c) const { return v.data() + (std::int64_t)c * n_spatial(); }
    T& at(int c, int ix, int iy, int iz = 0) {
        return v[((std::int64_t)c * dims[2] + iz) * dims[1] * dims[0] + (std::int64_t)iy * dims[0] + ix];
    }
    T at(int c, int ix, int iy, int iz = 0) const {
        return v[((std::int64_t)c * dims[2] + iz) * dims[1] * dims[0] + (std::int64_t)iy * dims[0] + ix];
    }
};

template <class T>
Tensor<T> make_tensor(int ndim, int nx, int ny, int nz, int channels);

/// 3x3 (2D) or 3x3x3 (3D) convolution, zero padding, stride 1.
/// Weights are [c_out][c_in][taps] with taps in (tz,)ty,tx row-major order.
template <class T>
struct ConvLayer {
    int ndim = 2;
    int c_in = 1;
    int c_out = 1;
    std::vector<T> w;
    std::vector<T> b;

    int kernel_volume() const { return ndim == 2 ? 9 : 27; }
};

/// Per-channel learnable negative-side slope.
template <class T>
struct PReLU {
    std::vector<T> slope;
};

/// g: two conv+PReLU blocks of 32 filters and a linear conv head.
template <class T>
struct Model {
    int ndim = 2;
    int c_in = 1;
    int c_out = 1;
    ConvLayer<T> conv1;
    PReLU<T> act1;
    ConvLayer<T> conv2;
    PReLU<T> act2;
    ConvLayer<T> head;
};

/// Zero-initialized model of the given shape. ndim 2 or 3.
template <class T>
Model<T> make_model(int ndim, int c_in, int c_out);

template <class T>
std::int64_t param_count(const Model<T>& m);

/// Visits every parameter array in declaration order:
/// conv1.w, conv1.b, act1.slope, conv2.w, conv2.b, act2.slope, head.w, head.b.
template <class T, class Fn>
void for_each_param(Model<T>& m, Fn&& fn) {
    fn(std::span<T>(m.conv1.w));
    fn(std::span<T>(m.conv1.b));
    fn(std::span<T>(m.act1.slope));
    fn(std::span<T>(m.conv2.w));
    fn(std::span<T>(m.conv2.b));
    fn(std::span<T>(m.act2.slope));
    fn(std::span<T>(m.head.w));
    fn(std::span<T>(m.head.b));
}

template <class T, class Fn>
void for_each_param(const Model<T>& m, Fn&& fn) {
    fn(std::span<const T>(m.conv1.w));
    fn(std::span<const T>(m.conv1.b));
    fn(std::span<const T>(m.act1.slope));
    fn(std::span<const T>(m.conv2.w));
    fn(std::span<const T>(m.conv2.b));
    fn(std::span<const T>(m.act2.slope));
    fn(std::span<const T>(m.head.w));
    fn(std::span<const T>(m.head.b));
}

/// Conv weights ~ N(0, 2/fan_in), biases 0, PReLU slopes 0.25.
template <class T>
void kaiming_init(Model<T>& m, std::uint64_t seed);

/// Activation record from one forward pass; consumed by model_backward.
template <class T>
struct Tape {
    Tensor<T> input, pre1, out1, pre2, out2;
    bool used = false;
};

/// Runs the network. Spatial dims must be >= 3 per axis; input channels must
/// equal c_in. Pass a tape to enable a backward pass.
template <class T>
Tensor<T> model_forward(const Model<T>& m, const Tensor<T>& in, Tape<T>* tape = nullptr);

/// Exact gradients of the recorded forward. Parameter gradients are
/// accumulated (+=) into `grads`, which must have the model's shape; the
/// input gradient is returned. Each tape can back one pass only.
template <class T>
Tensor<T> model_backward(const Model<T>& m, Tape<T>& tape, const Tensor<T>& out_grad,
                         Model<T>& grads);

template <class T>
struct AdamState {
    std::vector<T> m, v;
    std::int64_t step = 0;
};

template <class T>
AdamState<T> make_adam(const Model<T>& m);

/// Bias-corrected Adam with beta1 = 0.9, beta2 = 0.99, eps = 1e-8.
/// Non-finite gradients abort with NumericError.
template <class T>
void adam_step(Model<T>& params, const Model<T>& grads, AdamState<T>& state, T lr);

template <class T>
struct LossGrad {
    double loss = 0.0;
    Tensor<T> grad;
};

/// L = log(clamp(sum (g0 - t)^2 + omega * sum (g1 - (t - x))^2, 1e-12)),
/// pixel sums, with the analytic gradient w.r.t. gamma. Single-channel gamma
/// requires omega == 0; inside the clamp region the gradient is zero.
template <class T>
LossGrad<T> loss_and_grad(const Tensor<T>& gamma, const std::vector<T>& x,
                          const std::vector<T>& t, double omega);

}  // namespace lsirt::nn
