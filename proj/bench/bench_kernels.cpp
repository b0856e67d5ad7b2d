// Kernel benchmark: naive reference vs the production kernels under the
// serial and parallel execution policies. Build target `bench_kernels`;
// not part of the test suite.

#include <benchmark/benchmark.h>

#include "disagg/exec.hpp"
#include "disagg/nncore.hpp"
#include "disagg/ref_kernels.hpp"
#include "disagg/rng.hpp"

using namespace disagg;

namespace {

struct ConvCase {
    Tensor3<float> x;
    ConvParams<float> p;
    Tensor3<float> grad_out;
};

ConvCase make_conv_case(int batch, int channels, int length) {
    Rng rng(42);
    ConvCase c;
    c.x = Tensor3<float>(batch, channels, length);
    for (auto& v : c.x.data) v = (float)rng.uniform(-1.0, 1.0);
    c.p.kernel = Tensor3<float>(channels, channels, 3);
    for (auto& v : c.p.kernel.data) v = (float)rng.uniform(-1.0, 1.0);
    c.p.bias.assign(channels, 0.1f);
    c.p.dilation = 2;
    c.grad_out = Tensor3<float>(batch, channels, length);
    for (auto& v : c.grad_out.data) v = (float)rng.uniform(-1.0, 1.0);
    return c;
}

void conv_forward_reference(benchmark::State& state) {
    auto c = make_conv_case(8, 32, 512);
    for (auto _ : state) {
        auto out = ref::conv1d_forward(c.x, c.p);
        benchmark::DoNotOptimize(out.data.data());
    }
}

void conv_forward_serial(benchmark::State& state) {
    auto c = make_conv_case(8, 32, 512);
    set_execution_policy(Exec::serial);
    for (auto _ : state) {
        auto out = conv1d_forward(c.x, c.p);
        benchmark::DoNotOptimize(out.data.data());
    }
}

void conv_forward_parallel(benchmark::State& state) {
    auto c = make_conv_case(8, 32, 512);
    set_execution_policy(Exec::parallel);
    for (auto _ : state) {
        auto out = conv1d_forward(c.x, c.p);
        benchmark::DoNotOptimize(out.data.data());
    }
    set_execution_policy(Exec::serial);
}

void conv_backward_serial(benchmark::State& state) {
    auto c = make_conv_case(8, 32, 512);
    Tensor3<float> gx(8, 32, 512), gk(32, 32, 3);
    std::vector<float> gb(32, 0.0f);
    set_execution_policy(Exec::serial);
    for (auto _ : state) {
        gx.zero();
        gk.zero();
        std::fill(gb.begin(), gb.end(), 0.0f);
        conv1d_backward(c.x, c.p, c.grad_out, gx, gk, gb);
        benchmark::DoNotOptimize(gx.data.data());
    }
}

void conv_backward_parallel(benchmark::State& state) {
    auto c = make_conv_case(8, 32, 512);
    Tensor3<float> gx(8, 32, 512), gk(32, 32, 3);
    std::vector<float> gb(32, 0.0f);
    set_execution_policy(Exec::parallel);
    for (auto _ : state) {
        gx.zero();
        gk.zero();
        std::fill(gb.begin(), gb.end(), 0.0f);
        conv1d_backward(c.x, c.p, c.grad_out, gx, gk, gb);
        benchmark::DoNotOptimize(gx.data.data());
    }
    set_execution_policy(Exec::serial);
}

BatchNormParams<float> make_bn_params(int channels) {
    BatchNormParams<float> p;
    p.gamma.assign(channels, 1.0f);
    p.beta.assign(channels, 0.0f);
    p.running_mean.assign(channels, 0.0f);
    p.running_var.assign(channels, 1.0f);
    return p;
}

void batchnorm_forward_reference(benchmark::State& state) {
    auto c = make_conv_case(8, 32, 512);
    auto p = make_bn_params(32);
    for (auto _ : state) {
        auto out = ref::batchnorm_forward_train(c.x, p);
        benchmark::DoNotOptimize(out.data.data());
    }
}

void batchnorm_forward_serial(benchmark::State& state) {
    auto c = make_conv_case(8, 32, 512);
    auto p = make_bn_params(32);
    BatchNormCache<float> cache;
    set_execution_policy(Exec::serial);
    for (auto _ : state) {
        auto out = batchnorm_forward(c.x, p, Phase::train, &cache);
        benchmark::DoNotOptimize(out.data.data());
    }
}

void batchnorm_forward_parallel(benchmark::State& state) {
    auto c = make_conv_case(8, 32, 512);
    auto p = make_bn_params(32);
    BatchNormCache<float> cache;
    set_execution_policy(Exec::parallel);
    for (auto _ : state) {
        auto out = batchnorm_forward(c.x, p, Phase::train, &cache);
        benchmark::DoNotOptimize(out.data.data());
    }
    set_execution_policy(Exec::serial);
}

void max_pool_serial(benchmark::State& state) {
    auto c = make_conv_case(8, 32, 512);
    PoolIndices idx;
    set_execution_policy(Exec::serial);
    for (auto _ : state) {
        auto out = max_pool_forward(c.x, 2, idx);
        benchmark::DoNotOptimize(out.data.data());
    }
}

void max_pool_parallel(benchmark::State& state) {
    auto c = make_conv_case(8, 32, 512);
    PoolIndices idx;
    set_execution_policy(Exec::parallel);
    for (auto _ : state) {
        auto out = max_pool_forward(c.x, 2, idx);
        benchmark::DoNotOptimize(out.data.data());
    }
    set_execution_policy(Exec::serial);
}

BENCHMARK(conv_forward_reference);
BENCHMARK(conv_forward_serial);
BENCHMARK(conv_forward_parallel);
BENCHMARK(conv_backward_serial);
BENCHMARK(conv_backward_parallel);
BENCHMARK(batchnorm_forward_reference);
BENCHMARK(batchnorm_forward_serial);
BENCHMARK(batchnorm_forward_parallel);
BENCHMARK(max_pool_serial);
BENCHMARK(max_pool_parallel);

}  // namespace

BENCHMARK_MAIN();
