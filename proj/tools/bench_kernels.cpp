// Parallel kernels vs the serial reference loops, at the shapes one desk-scale
// episode (55 images, 32x32) pushes through the encoder.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "trident/kernels.hpp"

namespace k = trident::kernels;

namespace {

std::vector<double> noise(std::size_t n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d;
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

k::ConvGeometry geometry(const benchmark::State& s) {
  k::ConvGeometry g;
  g.batch = 55;
  g.in_channels = std::size_t(s.range(0));
  g.out_channels = 32;
  g.height = g.width = std::size_t(s.range(1));
  return g;
}

void set_flops(benchmark::State& s, const k::ConvGeometry& g) {
  s.counters["GFLOP/s"] = benchmark::Counter(2.0 * double(g.output_size()) * double(g.in_channels * g.ksize * g.ksize),
                                             benchmark::Counter::kIsIterationInvariantRate, benchmark::Counter::kIs1000);
}

template <auto Fn>
void conv_forward(benchmark::State& s) {
  const auto g = geometry(s);
  const auto x = noise(g.input_size(), 1), w = noise(g.weight_size(), 2);
  std::vector<double> y(g.output_size());
  for (auto _ : s) {
    Fn(x, w, y, g);
    benchmark::DoNotOptimize(y.data());
  }
  set_flops(s, g);
}

template <auto Fn>
void conv_backward_input(benchmark::State& s) {
  const auto g = geometry(s);
  const auto gy = noise(g.output_size(), 3), w = noise(g.weight_size(), 2);
  std::vector<double> gx(g.input_size());
  for (auto _ : s) {
    Fn(gy, w, gx, g);
    benchmark::DoNotOptimize(gx.data());
  }
  set_flops(s, g);
}

template <auto Fn>
void conv_backward_weight(benchmark::State& s) {
  const auto g = geometry(s);
  const auto x = noise(g.input_size(), 1), gy = noise(g.output_size(), 3);
  std::vector<double> gw(g.weight_size());
  for (auto _ : s) {
    Fn(x, gy, gw, g);
    benchmark::DoNotOptimize(gw.data());
  }
  set_flops(s, g);
}

template <auto Fn>
void matmul(benchmark::State& s) {
  const std::size_t m = std::size_t(s.range(0)), kk = std::size_t(s.range(1)), n = std::size_t(s.range(2));
  const auto a = noise(m * kk, 4), b = noise(kk * n, 5);
  std::vector<double> c(m * n);
  for (auto _ : s) {
    Fn(a, b, c, m, kk, n, false, false);
    benchmark::DoNotOptimize(c.data());
  }
  s.counters["GFLOP/s"] = benchmark::Counter(2.0 * double(m * kk * n), benchmark::Counter::kIsIterationInvariantRate,
                                             benchmark::Counter::kIs1000);
}

// (in_channels, spatial size) of the four encoder blocks
void conv_shapes(benchmark::internal::Benchmark* b) {
  b->Args({3, 32})->Args({32, 16})->Args({32, 8})->Args({32, 4})->Unit(benchmark::kMillisecond);
}

}  // namespace

BENCHMARK(conv_forward<k::conv2d_forward>)->Name("conv_forward/parallel")->Apply(conv_shapes);
BENCHMARK(conv_forward<k::reference::conv2d_forward>)->Name("conv_forward/reference")->Apply(conv_shapes);
BENCHMARK(conv_backward_input<k::conv2d_backward_input>)->Name("conv_backward_input/parallel")->Apply(conv_shapes);
BENCHMARK(conv_backward_input<k::reference::conv2d_backward_input>)->Name("conv_backward_input/reference")->Apply(conv_shapes);
BENCHMARK(conv_backward_weight<k::conv2d_backward_weight>)->Name("conv_backward_weight/parallel")->Apply(conv_shapes);
BENCHMARK(conv_backward_weight<k::reference::conv2d_backward_weight>)->Name("conv_backward_weight/reference")->Apply(conv_shapes);
BENCHMARK(matmul<k::matmul>)->Name("matmul/parallel")->Args({55, 128, 64})->Args({256, 256, 256});
BENCHMARK(matmul<k::reference::matmul>)->Name("matmul/reference")->Args({55, 128, 64})->Args({256, 256, 256});

BENCHMARK_MAIN();
