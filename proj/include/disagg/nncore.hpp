#pragma once

#include <vector>

#include "disagg/rng.hpp"
#include "disagg/tensor.hpp"

namespace disagg {

enum class Phase { train, infer };

/// Dilated 1-D cross-correlation parameters. The kernel tensor is laid out
/// [out_channels, in_channels, kernel_size]; kernel_size must be odd so the
/// tap window is symmetric around the output sample.
template <typename T>
struct ConvParams {
    Tensor3<T> kernel;
    std::vector<T> bias;
    int dilation = 1;

    int out_channels() const { return kernel.batch; }
    int in_channels() const { return kernel.channels; }
    int kernel_size() const { return kernel.length; }
};

template <typename T>
struct BatchNormParams {
    std::vector<T> gamma;
    std::vector<T> beta;
    std::vector<T> running_mean;
    std::vector<T> running_var;
    T epsilon = T(1e-5);
    // running = momentum * running + (1 - momentum) * batch statistic
    T momentum = T(0.99);

    int channels() const { return static_cast<int>(gamma.size()); }
};

/// Batch statistics retained by the train-mode forward pass for the backward.
template <typename T>
struct BatchNormCache {
    std::vector<T> mean;
    std::vector<T> inv_std;
};

/// Argmax positions (input time index) recorded by max_pool_forward, one per
/// pooled output element, in the output's flat (b, c, t) order.
struct PoolIndices {
    int factor = 1;
    std::vector<int> argmax;
};

// out[b,c,n] = bias[c] + sum_ci sum_{j=-k/2..k/2} x[b,ci,n+d*j] * kernel[c,ci,j]
// with out-of-range taps read as zero (same-length output).
template <typename T>
Tensor3<T> conv1d_forward(const Tensor3<T>& x, const ConvParams<T>& p);

// Exact adjoint of conv1d_forward. Accumulates (+=) into grad_x, grad_kernel
// and grad_bias; callers zero the buffers once per backward pass.
template <typename T>
void conv1d_backward(const Tensor3<T>& x, const ConvParams<T>& p,
                     const Tensor3<T>& grad_out, Tensor3<T>& grad_x,
                     Tensor3<T>& grad_kernel, std::vector<T>& grad_bias);

// Train: normalize with per-channel batch statistics over (batch, time) and
// update running statistics. Infer: normalize with running statistics.
// `cache` receives the batch statistics in train mode (may be null in infer).
template <typename T>
Tensor3<T> batchnorm_forward(const Tensor3<T>& x, BatchNormParams<T>& p,
                             Phase phase, BatchNormCache<T>* cache = nullptr);

// Analytic gradient of the train-mode transform including the dependence of
// the batch statistics on x. Accumulates into the three gradient buffers.
template <typename T>
void batchnorm_backward(const Tensor3<T>& x, const BatchNormParams<T>& p,
                        const BatchNormCache<T>& cache, const Tensor3<T>& grad_out,
                        Tensor3<T>& grad_x, std::vector<T>& grad_gamma,
                        std::vector<T>& grad_beta);

// max(alpha*x, x) with 0 <= alpha <= 1; slope at x == 0 is 1.
template <typename T>
Tensor3<T> leaky_relu_forward(const Tensor3<T>& x, T alpha);

template <typename T>
Tensor3<T> leaky_relu_backward(const Tensor3<T>& x, T alpha,
                               const Tensor3<T>& grad_out);

// Train: x + z with z ~ N(0, sigma^2) i.i.d. per element from `rng`.
// Infer: bit-identical copy of x. Backward is the identity.
template <typename T>
Tensor3<T> gaussian_noise(const Tensor3<T>& x, T sigma, Phase phase, Rng& rng);

// (1 + exp(-x))^-1, saturating without overflow for large |x|.
template <typename T>
Tensor3<T> logistic_sigmoid_forward(const Tensor3<T>& x);

// Takes the forward *output* y = f(x); grad_x = grad_out * y * (1 - y).
template <typename T>
Tensor3<T> logistic_sigmoid_backward(const Tensor3<T>& y,
                                     const Tensor3<T>& grad_out);

// Non-overlapping windows of `factor` samples reduced to their maximum.
// Ties resolve to the earliest position. Requires length % factor == 0.
template <typename T>
Tensor3<T> max_pool_forward(const Tensor3<T>& x, int factor, PoolIndices& idx);

// Routes each pooled gradient to its recorded argmax position.
template <typename T>
Tensor3<T> max_pool_backward(const PoolIndices& idx, const Tensor3<T>& grad_out);

// Each sample repeated `factor` times (forward fill).
template <typename T>
Tensor3<T> unpool_forward(const Tensor3<T>& x, int factor);

// Sums the `factor` incoming gradients per source sample.
template <typename T>
Tensor3<T> unpool_backward(int factor, const Tensor3<T>& grad_out);

// Stack along the channel axis: (B, Ca, T) + (B, Cb, T) -> (B, Ca+Cb, T).
template <typename T>
Tensor3<T> concat_channels(const Tensor3<T>& a, const Tensor3<T>& b);

// Splits grad_out back into the two channel ranges, accumulating.
template <typename T>
void concat_channels_backward(const Tensor3<T>& grad_out, int channels_a,
                              Tensor3<T>& grad_a, Tensor3<T>& grad_b);

template <typename T>
Tensor3<T> add_elementwise(const Tensor3<T>& a, const Tensor3<T>& b);
// add_elementwise backward: upstream gradient flows unchanged to both inputs.

}  // namespace disagg
