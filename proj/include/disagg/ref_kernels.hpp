#pragma once

#include <cmath>

#include "disagg/nncore.hpp"

// Naive single-threaded reference kernels, written as direct transcriptions
// of the operator definitions. They validate the OpenMP kernels in the test
// suite and serve as the baseline in the kernel benchmark. Not used on any
// production path.
namespace disagg::ref {

template <typename T>
Tensor3<T> conv1d_forward(const Tensor3<T>& x, const ConvParams<T>& p) {
    const int B = x.batch, Cin = x.channels, L = x.length;
    const int Cout = p.out_channels(), k = p.kernel_size(), d = p.dilation;
    const int h = k / 2;
    Tensor3<T> out(B, Cout, L);
    for (int b = 0; b < B; ++b)
        for (int co = 0; co < Cout; ++co)
            for (int n = 0; n < L; ++n) {
                T acc = p.bias[co];
                for (int ci = 0; ci < Cin; ++ci)
                    for (int j = 0; j < k; ++j) {
                        const int t = n + d * (j - h);
                        const T xv = (t >= 0 && t < L) ? x.at(b, ci, t) : T(0);
                        acc += xv * p.kernel.at(co, ci, j);
                    }
                out.at(b, co, n) = acc;
            }
    return out;
}

template <typename T>
void conv1d_backward(const Tensor3<T>& x, const ConvParams<T>& p,
                     const Tensor3<T>& grad_out, Tensor3<T>& grad_x,
                     Tensor3<T>& grad_kernel, std::vector<T>& grad_bias) {
    const int B = x.batch, Cin = x.channels, L = x.length;
    const int Cout = p.out_channels(), k = p.kernel_size(), d = p.dilation;
    const int h = k / 2;
    for (int b = 0; b < B; ++b)
        for (int co = 0; co < Cout; ++co)
            for (int n = 0; n < L; ++n) {
                const T g = grad_out.at(b, co, n);
                grad_bias[co] += g;
                for (int ci = 0; ci < Cin; ++ci)
                    for (int j = 0; j < k; ++j) {
                        const int t = n + d * (j - h);
                        if (t < 0 || t >= L) continue;
                        grad_kernel.at(co, ci, j) += g * x.at(b, ci, t);
                        grad_x.at(b, ci, t) += g * p.kernel.at(co, ci, j);
                    }
            }
}

template <typename T>
Tensor3<T> batchnorm_forward_train(const Tensor3<T>& x, const BatchNormParams<T>& p) {
    const int B = x.batch, C = x.channels, L = x.length;
    const T m = static_cast<T>(static_cast<size_t>(B) * L);
    Tensor3<T> out(B, C, L);
    for (int c = 0; c < C; ++c) {
        T mean = T(0);
        for (int b = 0; b < B; ++b)
            for (int n = 0; n < L; ++n) mean += x.at(b, c, n);
        mean /= m;
        T var = T(0);
        for (int b = 0; b < B; ++b)
            for (int n = 0; n < L; ++n) {
                const T dlt = x.at(b, c, n) - mean;
                var += dlt * dlt;
            }
        var /= m;
        for (int b = 0; b < B; ++b)
            for (int n = 0; n < L; ++n)
                out.at(b, c, n) = p.gamma[c] * (x.at(b, c, n) - mean) /
                                      std::sqrt(var + p.epsilon) +
                                  p.beta[c];
    }
    return out;
}

}  // namespace disagg::ref
