#include "disagg/nncore.hpp"

#include <algorithm>
#include <cmath>

#include "disagg/exec.hpp"

namespace disagg {

namespace {

template <typename T>
void check_conv(const Tensor3<T>& x, const ConvParams<T>& p) {
    if (p.kernel_size() % 2 == 0)
        throw ShapeError("conv1d: kernel_size must be odd");
    if (p.dilation < 1)
        throw ShapeError("conv1d: dilation must be >= 1");
    if (x.channels != p.in_channels())
        throw ShapeError("conv1d: input has " + std::to_string(x.channels) +
                         " channels, kernel expects " +
                         std::to_string(p.in_channels()));
    if (static_cast<int>(p.bias.size()) != p.out_channels())
        throw ShapeError("conv1d: bias length != out_channels");
}

}  // namespace

// The kernel loop is written as a clipped axpy per (ci, j) tap so the inner
// loop vectorizes; per output element the additions still happen in the fixed
// order bias, (ci=0,j=0), (ci=0,j=1), ..., which keeps serial and parallel
// runs bit-identical.
template <typename T>
Tensor3<T> conv1d_forward(const Tensor3<T>& x, const ConvParams<T>& p) {
    check_conv(x, p);
    const int B = x.batch, Cin = x.channels, L = x.length;
    const int Cout = p.out_channels(), k = p.kernel_size(), d = p.dilation;
    const int h = k / 2;

    Tensor3<T> out(B, Cout, L);
#pragma omp parallel for collapse(2) if (run_parallel())
    for (int b = 0; b < B; ++b) {
        for (int co = 0; co < Cout; ++co) {
            T* o = out.row(b, co);
            std::fill(o, o + L, p.bias[co]);
            for (int ci = 0; ci < Cin; ++ci) {
                const T* xs = x.row(b, ci);
                const T* w = p.kernel.row(co, ci);
                for (int j = 0; j < k; ++j) {
                    const int off = d * (j - h);
                    const T wj = w[j];
                    const int n0 = std::max(0, -off);
                    const int n1 = std::min(L, L - off);
                    for (int n = n0; n < n1; ++n) o[n] += wj * xs[n + off];
                }
            }
        }
    }
    return out;
}

template <typename T>
void conv1d_backward(const Tensor3<T>& x, const ConvParams<T>& p,
                     const Tensor3<T>& grad_out, Tensor3<T>& grad_x,
                     Tensor3<T>& grad_kernel, std::vector<T>& grad_bias) {
    check_conv(x, p);
    const int B = x.batch, Cin = x.channels, L = x.length;
    const int Cout = p.out_channels(), k = p.kernel_size(), d = p.dilation;
    const int h = k / 2;
    if (grad_out.batch != B || grad_out.channels != Cout || grad_out.length != L)
        throw ShapeError("conv1d_backward: grad_out shape mismatch");
    if (!grad_x.same_shape(x) || !grad_kernel.same_shape(p.kernel) ||
        grad_bias.size() != p.bias.size())
        throw ShapeError("conv1d_backward: gradient buffer shape mismatch");

    // d out[b,co,n] / d x[b,ci,n+off] = w[co,ci,j]
#pragma omp parallel for collapse(2) if (run_parallel())
    for (int b = 0; b < B; ++b) {
        for (int ci = 0; ci < Cin; ++ci) {
            T* gx = grad_x.row(b, ci);
            for (int co = 0; co < Cout; ++co) {
                const T* g = grad_out.row(b, co);
                const T* w = p.kernel.row(co, ci);
                for (int j = 0; j < k; ++j) {
                    const int off = d * (j - h);
                    const T wj = w[j];
                    const int m0 = std::max(0, off);
                    const int m1 = std::min(L, L + off);
                    for (int m = m0; m < m1; ++m) gx[m] += wj * g[m - off];
                }
            }
        }
    }

#pragma omp parallel for collapse(2) if (run_parallel())
    for (int co = 0; co < Cout; ++co) {
        for (int ci = 0; ci < Cin; ++ci) {
            T* gw = grad_kernel.row(co, ci);
            for (int j = 0; j < k; ++j) {
                const int off = d * (j - h);
                const int n0 = std::max(0, -off);
                const int n1 = std::min(L, L - off);
                T acc = T(0);
                for (int b = 0; b < B; ++b) {
                    const T* g = grad_out.row(b, co);
                    const T* xs = x.row(b, ci);
                    for (int n = n0; n < n1; ++n) acc += g[n] * xs[n + off];
                }
                gw[j] += acc;
            }
        }
    }

#pragma omp parallel for if (run_parallel())
    for (int co = 0; co < Cout; ++co) {
        T acc = T(0);
        for (int b = 0; b < B; ++b) {
            const T* g = grad_out.row(b, co);
            for (int n = 0; n < L; ++n) acc += g[n];
        }
        grad_bias[co] += acc;
    }
}

template <typename T>
Tensor3<T> batchnorm_forward(const Tensor3<T>& x, BatchNormParams<T>& p,
                             Phase phase, BatchNormCache<T>* cache) {
    const int B = x.batch, C = x.channels, L = x.length;
    if (C != p.channels())
        throw ShapeError("batchnorm: channel count mismatch");
    const T m = static_cast<T>(static_cast<size_t>(B) * L);

    Tensor3<T> out(B, C, L);
    if (phase == Phase::train && cache) {
        cache->mean.assign(C, T(0));
        cache->inv_std.assign(C, T(0));
    }

#pragma omp parallel for if (run_parallel())
    for (int c = 0; c < C; ++c) {
        T mean, inv;
        if (phase == Phase::train) {
            T sum = T(0);
            for (int b = 0; b < B; ++b) {
                const T* xs = x.row(b, c);
                for (int n = 0; n < L; ++n) sum += xs[n];
            }
            mean = sum / m;
            T sq = T(0);
            for (int b = 0; b < B; ++b) {
                const T* xs = x.row(b, c);
                for (int n = 0; n < L; ++n) {
                    const T dlt = xs[n] - mean;
                    sq += dlt * dlt;
                }
            }
            const T var = sq / m;
            inv = T(1) / std::sqrt(var + p.epsilon);
            p.running_mean[c] = p.momentum * p.running_mean[c] + (T(1) - p.momentum) * mean;
            p.running_var[c] = p.momentum * p.running_var[c] + (T(1) - p.momentum) * var;
            if (cache) {
                cache->mean[c] = mean;
                cache->inv_std[c] = inv;
            }
        } else {
            mean = p.running_mean[c];
            inv = T(1) / std::sqrt(p.running_var[c] + p.epsilon);
        }
        const T g = p.gamma[c], bt = p.beta[c];
        for (int b = 0; b < B; ++b) {
            const T* xs = x.row(b, c);
            T* o = out.row(b, c);
            for (int n = 0; n < L; ++n) o[n] = g * (xs[n] - mean) * inv + bt;
        }
    }
    return out;
}

template <typename T>
void batchnorm_backward(const Tensor3<T>& x, const BatchNormParams<T>& p,
                        const BatchNormCache<T>& cache, const Tensor3<T>& grad_out,
                        Tensor3<T>& grad_x, std::vector<T>& grad_gamma,
                        std::vector<T>& grad_beta) {
    const int B = x.batch, C = x.channels, L = x.length;
    require_same_shape(x, grad_out, "batchnorm_backward");
    require_same_shape(x, grad_x, "batchnorm_backward");
    const T m = static_cast<T>(static_cast<size_t>(B) * L);

#pragma omp parallel for if (run_parallel())
    for (int c = 0; c < C; ++c) {
        const T mean = cache.mean[c], inv = cache.inv_std[c];
        T sum_g = T(0), sum_gx = T(0);
        for (int b = 0; b < B; ++b) {
            const T* xs = x.row(b, c);
            const T* g = grad_out.row(b, c);
            for (int n = 0; n < L; ++n) {
                sum_g += g[n];
                sum_gx += g[n] * (xs[n] - mean) * inv;
            }
        }
        grad_beta[c] += sum_g;
        grad_gamma[c] += sum_gx;
        const T scale = p.gamma[c] * inv;
        for (int b = 0; b < B; ++b) {
            const T* xs = x.row(b, c);
            const T* g = grad_out.row(b, c);
            T* gx = grad_x.row(b, c);
            for (int n = 0; n < L; ++n) {
                const T xhat = (xs[n] - mean) * inv;
                gx[n] += scale * (g[n] - sum_g / m - xhat * sum_gx / m);
            }
        }
    }
}

template <typename T>
Tensor3<T> leaky_relu_forward(const Tensor3<T>& x, T alpha) {
    if (alpha < T(0) || alpha > T(1))
        throw ConfigError("leaky_relu: alpha must be in [0, 1]");
    Tensor3<T> out(x.batch, x.channels, x.length);
    const size_t n = x.size();
#pragma omp parallel for if (run_parallel())
    for (size_t i = 0; i < n; ++i) {
        const T v = x.data[i];
        out.data[i] = v > T(0) ? v : alpha * v;
    }
    return out;
}

template <typename T>
Tensor3<T> leaky_relu_backward(const Tensor3<T>& x, T alpha,
                               const Tensor3<T>& grad_out) {
    require_same_shape(x, grad_out, "leaky_relu_backward");
    Tensor3<T> gx(x.batch, x.channels, x.length);
    const size_t n = x.size();
    // slope at exactly zero is 1
#pragma omp parallel for if (run_parallel())
    for (size_t i = 0; i < n; ++i)
        gx.data[i] = grad_out.data[i] * (x.data[i] < T(0) ? alpha : T(1));
    return gx;
}

template <typename T>
Tensor3<T> gaussian_noise(const Tensor3<T>& x, T sigma, Phase phase, Rng& rng) {
    if (sigma < T(0)) throw ConfigError("gaussian_noise: sigma must be >= 0");
    Tensor3<T> out = x;
    if (phase == Phase::infer || sigma == T(0)) return out;
    // single stream: drawn serially so the sequence is thread-count independent
    for (T& v : out.data) v += static_cast<T>(rng.normal(0.0, static_cast<double>(sigma)));
    return out;
}

template <typename T>
Tensor3<T> logistic_sigmoid_forward(const Tensor3<T>& x) {
    Tensor3<T> out(x.batch, x.channels, x.length);
    const size_t n = x.size();
#pragma omp parallel for if (run_parallel())
    for (size_t i = 0; i < n; ++i) {
        const T v = x.data[i];
        if (v >= T(0)) {
            out.data[i] = T(1) / (T(1) + std::exp(-v));
        } else {
            const T e = std::exp(v);
            out.data[i] = e / (T(1) + e);
        }
    }
    return out;
}

template <typename T>
Tensor3<T> logistic_sigmoid_backward(const Tensor3<T>& y,
                                     const Tensor3<T>& grad_out) {
    require_same_shape(y, grad_out, "logistic_sigmoid_backward");
    Tensor3<T> gx(y.batch, y.channels, y.length);
    const size_t n = y.size();
#pragma omp parallel for if (run_parallel())
    for (size_t i = 0; i < n; ++i)
        gx.data[i] = grad_out.data[i] * y.data[i] * (T(1) - y.data[i]);
    return gx;
}

template <typename T>
Tensor3<T> max_pool_forward(const Tensor3<T>& x, int factor, PoolIndices& idx) {
    if (factor < 1) throw ShapeError("max_pool: factor must be >= 1");
    if (x.length % factor != 0)
        throw ShapeError("max_pool: length " + std::to_string(x.length) +
                         " not divisible by factor " + std::to_string(factor));
    const int B = x.batch, C = x.channels, Lo = x.length / factor;
    Tensor3<T> out(B, C, Lo);
    idx.factor = factor;
    idx.argmax.assign(out.size(), 0);
#pragma omp parallel for collapse(2) if (run_parallel())
    for (int b = 0; b < B; ++b) {
        for (int c = 0; c < C; ++c) {
            const T* xs = x.row(b, c);
            T* o = out.row(b, c);
            int* am = idx.argmax.data() +
                      (static_cast<size_t>(b) * C + c) * Lo;
            for (int n = 0; n < Lo; ++n) {
                int best = n * factor;
                T bv = xs[best];
                for (int q = 1; q < factor; ++q) {
                    const int t = n * factor + q;
                    if (xs[t] > bv) {
                        bv = xs[t];
                        best = t;
                    }
                }
                o[n] = bv;
                am[n] = best;
            }
        }
    }
    return out;
}

template <typename T>
Tensor3<T> max_pool_backward(const PoolIndices& idx, const Tensor3<T>& grad_out) {
    const int B = grad_out.batch, C = grad_out.channels, Lo = grad_out.length;
    if (idx.argmax.size() != grad_out.size())
        throw ShapeError("max_pool_backward: index/gradient size mismatch");
    Tensor3<T> gx(B, C, Lo * idx.factor);
#pragma omp parallel for collapse(2) if (run_parallel())
    for (int b = 0; b < B; ++b) {
        for (int c = 0; c < C; ++c) {
            const T* g = grad_out.row(b, c);
            const int* am = idx.argmax.data() +
                            (static_cast<size_t>(b) * C + c) * Lo;
            T* o = gx.row(b, c);
            for (int n = 0; n < Lo; ++n) o[am[n]] += g[n];
        }
    }
    return gx;
}

template <typename T>
Tensor3<T> unpool_forward(const Tensor3<T>& x, int factor) {
    if (factor < 1) throw ShapeError("unpool: factor must be >= 1");
    const int B = x.batch, C = x.channels, L = x.length;
    Tensor3<T> out(B, C, L * factor);
#pragma omp parallel for collapse(2) if (run_parallel())
    for (int b = 0; b < B; ++b) {
        for (int c = 0; c < C; ++c) {
            const T* xs = x.row(b, c);
            T* o = out.row(b, c);
            for (int n = 0; n < L; ++n)
                for (int q = 0; q < factor; ++q) o[n * factor + q] = xs[n];
        }
    }
    return out;
}

template <typename T>
Tensor3<T> unpool_backward(int factor, const Tensor3<T>& grad_out) {
    if (factor < 1) throw ShapeError("unpool: factor must be >= 1");
    if (grad_out.length % factor != 0)
        throw ShapeError("unpool_backward: length not divisible by factor");
    const int B = grad_out.batch, C = grad_out.channels;
    const int L = grad_out.length / factor;
    Tensor3<T> gx(B, C, L);
#pragma omp parallel for collapse(2) if (run_parallel())
    for (int b = 0; b < B; ++b) {
        for (int c = 0; c < C; ++c) {
            const T* g = grad_out.row(b, c);
            T* o = gx.row(b, c);
            for (int n = 0; n < L; ++n) {
                T acc = T(0);
                for (int q = 0; q < factor; ++q) acc += g[n * factor + q];
                o[n] = acc;
            }
        }
    }
    return gx;
}

template <typename T>
Tensor3<T> concat_channels(const Tensor3<T>& a, const Tensor3<T>& b) {
    if (a.batch != b.batch || a.length != b.length)
        throw ShapeError("concat_channels: batch/time mismatch");
    Tensor3<T> out(a.batch, a.channels + b.channels, a.length);
#pragma omp parallel for if (run_parallel())
    for (int bt = 0; bt < a.batch; ++bt) {
        for (int c = 0; c < a.channels; ++c)
            std::copy(a.row(bt, c), a.row(bt, c) + a.length, out.row(bt, c));
        for (int c = 0; c < b.channels; ++c)
            std::copy(b.row(bt, c), b.row(bt, c) + b.length,
                      out.row(bt, a.channels + c));
    }
    return out;
}

template <typename T>
void concat_channels_backward(const Tensor3<T>& grad_out, int channels_a,
                              Tensor3<T>& grad_a, Tensor3<T>& grad_b) {
    if (grad_a.channels != channels_a ||
        grad_b.channels != grad_out.channels - channels_a ||
        grad_a.batch != grad_out.batch || grad_a.length != grad_out.length ||
        grad_b.batch != grad_out.batch || grad_b.length != grad_out.length)
        throw ShapeError("concat_channels_backward: shape mismatch");
    const int L = grad_out.length;
#pragma omp parallel for if (run_parallel())
    for (int bt = 0; bt < grad_out.batch; ++bt) {
        for (int c = 0; c < channels_a; ++c) {
            const T* g = grad_out.row(bt, c);
            T* o = grad_a.row(bt, c);
            for (int n = 0; n < L; ++n) o[n] += g[n];
        }
        for (int c = 0; c < grad_b.channels; ++c) {
            const T* g = grad_out.row(bt, channels_a + c);
            T* o = grad_b.row(bt, c);
            for (int n = 0; n < L; ++n) o[n] += g[n];
        }
    }
}

template <typename T>
Tensor3<T> add_elementwise(const Tensor3<T>& a, const Tensor3<T>& b) {
    require_same_shape(a, b, "add_elementwise");
    Tensor3<T> out(a.batch, a.channels, a.length);
    const size_t n = a.size();
#pragma omp parallel for if (run_parallel())
    for (size_t i = 0; i < n; ++i) out.data[i] = a.data[i] + b.data[i];
    return out;
}

#define DISAGG_INSTANTIATE(T)                                                   \
    template Tensor3<T> conv1d_forward<T>(const Tensor3<T>&, const ConvParams<T>&); \
    template void conv1d_backward<T>(const Tensor3<T>&, const ConvParams<T>&,  \
                                     const Tensor3<T>&, Tensor3<T>&,           \
                                     Tensor3<T>&, std::vector<T>&);            \
    template Tensor3<T> batchnorm_forward<T>(const Tensor3<T>&,                \
                                             BatchNormParams<T>&, Phase,       \
                                             BatchNormCache<T>*);              \
    template void batchnorm_backward<T>(const Tensor3<T>&,                     \
                                        const BatchNormParams<T>&,             \
                                        const BatchNormCache<T>&,              \
                                        const Tensor3<T>&, Tensor3<T>&,        \
                                        std::vector<T>&, std::vector<T>&);     \
    template Tensor3<T> leaky_relu_forward<T>(const Tensor3<T>&, T);           \
    template Tensor3<T> leaky_relu_backward<T>(const Tensor3<T>&, T,           \
                                               const Tensor3<T>&);             \
    template Tensor3<T> gaussian_noise<T>(const Tensor3<T>&, T, Phase, Rng&);  \
    template Tensor3<T> logistic_sigmoid_forward<T>(const Tensor3<T>&);        \
    template Tensor3<T> logistic_sigmoid_backward<T>(const Tensor3<T>&,        \
                                                     const Tensor3<T>&);       \
    template Tensor3<T> max_pool_forward<T>(const Tensor3<T>&, int,            \
                                            PoolIndices&);                     \
    template Tensor3<T> max_pool_backward<T>(const PoolIndices&,               \
                                             const Tensor3<T>&);               \
    template Tensor3<T> unpool_forward<T>(const Tensor3<T>&, int);             \
    template Tensor3<T> unpool_backward<T>(int, const Tensor3<T>&);            \
    template Tensor3<T> concat_channels<T>(const Tensor3<T>&, const Tensor3<T>&); \
    template void concat_channels_backward<T>(const Tensor3<T>&, int,          \
                                              Tensor3<T>&, Tensor3<T>&);       \
    template Tensor3<T> add_elementwise<T>(const Tensor3<T>&, const Tensor3<T>&);

DISAGG_INSTANTIATE(float)
DISAGG_INSTANTIATE(double)

#undef DISAGG_INSTANTIATE

}  // namespace disagg
