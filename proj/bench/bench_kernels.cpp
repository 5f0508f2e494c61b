// Parallel kernels vs the serial reference on backbone-sized shapes.
#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "xnet/kernels.hpp"

namespace {

using xnet::ConvGeometry;
using xnet::ConvSpec;

std::vector<float> noise(std::size_t n, unsigned seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<float> d(0.f, 1.f);
  std::vector<float> v(n);
  for (float& x : v) x = d(rng);
  return v;
}

// args: batch, channels, side, stride_w
ConvGeometry geometry(const benchmark::State& s) {
  const auto c = static_cast<std::size_t>(s.range(1));
  return ConvGeometry::make(ConvSpec::square(c, c, 3, 1, static_cast<std::size_t>(s.range(3))),
                            static_cast<std::size_t>(s.range(0)), static_cast<std::size_t>(s.range(2)),
                            static_cast<std::size_t>(s.range(2)));
}

template <bool Parallel>
void ConvForward(benchmark::State& s) {
  const ConvGeometry g = geometry(s);
  const auto x = noise(g.input_size(), 1), w = noise(g.weight_size(), 2), b = noise(g.spec.out_channels, 3);
  std::vector<float> y(g.output_size());
  for (auto _ : s) {
    if constexpr (Parallel)
      xnet::kernels::conv2d_forward<float>(g, x, w, b, y);
    else
      xnet::reference::conv2d_forward<float>(g, x, w, b, y);
    benchmark::DoNotOptimize(y.data());
  }
  s.SetItemsProcessed(s.iterations() * static_cast<int64_t>(g.output_size() * g.spec.in_channels * 9));
}

template <bool Parallel>
void ConvBackward(benchmark::State& s) {
  const ConvGeometry g = geometry(s);
  const auto x = noise(g.input_size(), 1), w = noise(g.weight_size(), 2), dy = noise(g.output_size(), 3);
  std::vector<float> dx(g.input_size()), dw(g.weight_size()), db(g.spec.out_channels);
  for (auto _ : s) {
    if constexpr (Parallel)
      xnet::kernels::conv2d_backward<float>(g, x, w, dy, dx, dw, db);
    else
      xnet::reference::conv2d_backward<float>(g, x, w, dy, dx, dw, db);
    benchmark::DoNotOptimize(dw.data());
  }
}

template <bool Parallel>
void MaxPool(benchmark::State& s) {
  const auto planes = static_cast<std::size_t>(s.range(0) * s.range(1));
  const auto side = static_cast<std::size_t>(s.range(2));
  const auto x = noise(planes * side * side, 4), dy = noise(planes * side * side, 5);
  std::vector<float> y(x.size()), dx(x.size());
  for (auto _ : s) {
    if constexpr (Parallel) {
      xnet::kernels::max_pool3x3_forward<float>(planes, side, side, x, y);
      xnet::kernels::max_pool3x3_backward<float>(planes, side, side, x, dy, dx);
    } else {
      xnet::reference::max_pool3x3_forward<float>(planes, side, side, x, y);
      xnet::reference::max_pool3x3_backward<float>(planes, side, side, x, dy, dx);
    }
    benchmark::DoNotOptimize(dx.data());
  }
}

void ConvArgs(benchmark::internal::Benchmark* b) {
  b->ArgNames({"batch", "ch", "side", "sw"});
  b->Args({8, 32, 16, 1})->Args({8, 32, 16, 2})->Args({8, 32, 64, 1})->Args({1, 64, 32, 1});
  b->Unit(benchmark::kMicrosecond);
}

void PoolArgs(benchmark::internal::Benchmark* b) {
  b->ArgNames({"batch", "ch", "side"})->Args({8, 32, 16})->Args({8, 32, 64})->Unit(benchmark::kMicrosecond);
}

}  // namespace

BENCHMARK(ConvForward<false>)->Name("conv_forward/reference")->Apply(ConvArgs);
BENCHMARK(ConvForward<true>)->Name("conv_forward/parallel")->Apply(ConvArgs);
BENCHMARK(ConvBackward<false>)->Name("conv_backward/reference")->Apply(ConvArgs);
BENCHMARK(ConvBackward<true>)->Name("conv_backward/parallel")->Apply(ConvArgs);
BENCHMARK(MaxPool<false>)->Name("max_pool/reference")->Apply(PoolArgs);
BENCHMARK(MaxPool<true>)->Name("max_pool/parallel")->Apply(PoolArgs);

BENCHMARK_MAIN();
