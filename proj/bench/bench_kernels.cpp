// Copyright (c) the mce authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


// Serial reference vs OpenMP kernels at the estimator's working shapes.

#include <benchmark/benchmark.h>

#include <vector>

#include "mce/kernels.hpp"
#include "mce/numerics.hpp"

namespace {

using mce::kernels::ConvShape;

std::vector<double> filled(std::size_t n, std::uint64_t seed) {
    mce::RngStream rng(seed, mce::StreamId{});
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(-1.0, 1.0);
    return v;
}

struct ConvData {
    ConvShape s;
    std::vector<double> in, kernel, bias, out, grad_in, grad_kernel, grad_bias;

    explicit ConvData(const benchmark::State& state)
        : s{64, 16, 4, static_cast<int>(state.range(0)), static_cast<int>(state.range(0))} {
        const std::size_t px = static_cast<std::size_t>(s.batch * s.height * s.width);
        in = filled(px * s.in_channels, 1);
        kernel = filled(9 * static_cast<std::size_t>(s.in_channels * s.out_channels), 2);
        bias = filled(static_cast<std::size_t>(s.out_channels), 3);
        out = filled(px * s.out_channels, 4);
        grad_in.assign(in.size(), 0.0);
        grad_kernel.assign(kernel.size(), 0.0);
        grad_bias.assign(bias.size(), 0.0);
    }

    double macs() const {
        return 9.0 * s.in_channels * s.out_channels * s.batch * s.height * s.width;
    }
};

template <auto Fn>
void conv_forward(benchmark::State& state) {
    ConvData d(state);
    for (auto _ : state) {
        Fn(d.s, d.in.data(), d.kernel.data(), d.bias.data(), d.out.data());
        benchmark::DoNotOptimize(d.out.data());
    }
    state.counters["MAC/s"] = benchmark::Counter(d.macs(), benchmark::Counter::kIsIterationInvariantRate);
}

template <auto Fn>
void conv_backward_input(benchmark::State& state) {
    ConvData d(state);
    for (auto _ : state) {
        Fn(d.s, d.out.data(), d.kernel.data(), d.grad_in.data());
        benchmark::DoNotOptimize(d.grad_in.data());
    }
    state.counters["MAC/s"] = benchmark::Counter(d.macs(), benchmark::Counter::kIsIterationInvariantRate);
}

template <auto Fn>
void conv_backward_weights(benchmark::State& state) {
    ConvData d(state);
    for (auto _ : state) {
        Fn(d.s, d.in.data(), d.out.data(), d.grad_kernel.data(), d.grad_bias.data());
        benchmark::DoNotOptimize(d.grad_kernel.data());
    }
    state.counters["MAC/s"] = benchmark::Counter(d.macs(), benchmark::Counter::kIsIterationInvariantRate);
}

template <auto Fn>
void dense_forward(benchmark::State& state) {
    const int b = 256, n = static_cast<int>(state.range(0));
    const auto x = filled(static_cast<std::size_t>(b * n), 1);
    const auto w = filled(static_cast<std::size_t>(n * n), 2);
    const auto bias = filled(static_cast<std::size_t>(n), 3);
    std::vector<double> y(static_cast<std::size_t>(b * n));
    for (auto _ : state) {
        Fn(b, n, n, x.data(), w.data(), bias.data(), y.data());
        benchmark::DoNotOptimize(y.data());
    }
}

template <auto Fn>
void dense_backward(benchmark::State& state) {
    const int b = 256, n = static_cast<int>(state.range(0));
    const auto x = filled(static_cast<std::size_t>(b * n), 1);
    const auto w = filled(static_cast<std::size_t>(n * n), 2);
    const auto gy = filled(static_cast<std::size_t>(b * n), 3);
    std::vector<double> gx(x.size()), gw(w.size()), gb(static_cast<std::size_t>(n));
    for (auto _ : state) {
        Fn(b, n, n, x.data(), w.data(), gy.data(), gx.data(), gw.data(), gb.data());
        benchmark::DoNotOptimize(gw.data());
    }
}

namespace ser = mce::kernels::serial;
namespace par = mce::kernels::parallel;

BENCHMARK(conv_forward<ser::conv3x3_forward>)->Name("conv_forward/serial")->Arg(16)->Arg(64);
BENCHMARK(conv_forward<par::conv3x3_forward>)->Name("conv_forward/parallel")->Arg(16)->Arg(64);
BENCHMARK(conv_backward_input<ser::conv3x3_backward_input>)->Name("conv_backward_input/serial")->Arg(16)->Arg(64);
BENCHMARK(conv_backward_input<par::conv3x3_backward_input>)->Name("conv_backward_input/parallel")->Arg(16)->Arg(64);
BENCHMARK(conv_backward_weights<ser::conv3x3_backward_weights>)
    ->Name("conv_backward_weights/serial")->Arg(16)->Arg(64);
BENCHMARK(conv_backward_weights<par::conv3x3_backward_weights>)
    ->Name("conv_backward_weights/parallel")->Arg(16)->Arg(64);
BENCHMARK(dense_forward<ser::dense_forward>)->Name("dense_forward/serial")->Arg(16)->Arg(64);
BENCHMARK(dense_forward<par::dense_forward>)->Name("dense_forward/parallel")->Arg(16)->Arg(64);
BENCHMARK(dense_backward<ser::dense_backward>)->Name("dense_backward/serial")->Arg(16)->Arg(64);
BENCHMARK(dense_backward<par::dense_backward>)->Name("dense_backward/parallel")->Arg(16)->Arg(64);

}  // namespace

BENCHMARK_MAIN();
