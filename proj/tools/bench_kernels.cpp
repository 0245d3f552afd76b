// Serial reference vs OpenMP kernels on training-sized workloads.
// Run with --benchmark_filter=conv2d to narrow.

#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "vqdraw/kernels.hpp"

using namespace vqdraw;

namespace {

std::vector<float> random_vec(long n, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<float> d(-1, 1);
  std::vector<float> out(n);
  for (auto& x : out) x = d(rng);
  return out;
}

// 28x28 single-channel input into 8 feature channels, the first downsampling
// convolution of the image profile
const kernels::Conv2dDims kConv{1, 28, 28, 8, 3, 3, 2, 1, 14, 14};
const kernels::TConv2dDims kTConv{8, 14, 14, 8, 4, 4, 2, 1, 28, 28};

void bench_conv2d_fwd_serial(benchmark::State& state) {
  auto x = random_vec(1 * 28 * 28, 1);
  auto w = random_vec(8 * 1 * 3 * 3, 2);
  std::vector<float> y(8 * 14 * 14);
  for (auto _ : state) {
    kernels::conv2d_fwd_serial(x.data(), w.data(), y.data(), kConv);
    benchmark::DoNotOptimize(y.data());
  }
}

void bench_conv2d_fwd_omp(benchmark::State& state) {
  auto x = random_vec(1 * 28 * 28, 1);
  auto w = random_vec(8 * 1 * 3 * 3, 2);
  std::vector<float> y(8 * 14 * 14);
  for (auto _ : state) {
    kernels::conv2d_fwd_omp(x.data(), w.data(), y.data(), kConv);
    benchmark::DoNotOptimize(y.data());
  }
}

void bench_conv2d_bwd_input_serial(benchmark::State& state) {
  auto dy = random_vec(8 * 14 * 14, 3);
  auto w = random_vec(8 * 1 * 3 * 3, 2);
  std::vector<float> dx(1 * 28 * 28);
  for (auto _ : state) {
    std::fill(dx.begin(), dx.end(), 0.0f);
    kernels::conv2d_bwd_input_serial(dy.data(), w.data(), dx.data(), kConv);
    benchmark::DoNotOptimize(dx.data());
  }
}

void bench_conv2d_bwd_input_omp(benchmark::State& state) {
  auto dy = random_vec(8 * 14 * 14, 3);
  auto w = random_vec(8 * 1 * 3 * 3, 2);
  std::vector<float> dx(1 * 28 * 28);
  for (auto _ : state) {
    std::fill(dx.begin(), dx.end(), 0.0f);
    kernels::conv2d_bwd_input_omp(dy.data(), w.data(), dx.data(), kConv);
    benchmark::DoNotOptimize(dx.data());
  }
}

void bench_tconv2d_fwd_serial(benchmark::State& state) {
  auto x = random_vec(8 * 14 * 14, 4);
  auto w = random_vec(8 * 8 * 4 * 4, 5);
  std::vector<float> y(8 * 28 * 28);
  for (auto _ : state) {
    kernels::tconv2d_fwd_serial(x.data(), w.data(), y.data(), kTConv);
    benchmark::DoNotOptimize(y.data());
  }
}

void bench_tconv2d_fwd_omp(benchmark::State& state) {
  auto x = random_vec(8 * 14 * 14, 4);
  auto w = random_vec(8 * 8 * 4 * 4, 5);
  std::vector<float> y(8 * 28 * 28);
  for (auto _ : state) {
    kernels::tconv2d_fwd_omp(x.data(), w.data(), y.data(), kTConv);
    benchmark::DoNotOptimize(y.data());
  }
}

void bench_matmul_serial(benchmark::State& state) {
  const int n = (int)state.range(0);
  auto a = random_vec((long)n * n, 6);
  auto b = random_vec((long)n * n, 7);
  std::vector<float> y((long)n * n);
  for (auto _ : state) {
    kernels::matmul_serial(a.data(), b.data(), y.data(), n, n, n, false, false);
    benchmark::DoNotOptimize(y.data());
  }
}

void bench_matmul_omp(benchmark::State& state) {
  const int n = (int)state.range(0);
  auto a = random_vec((long)n * n, 6);
  auto b = random_vec((long)n * n, 7);
  std::vector<float> y((long)n * n);
  for (auto _ : state) {
    kernels::matmul_omp(a.data(), b.data(), y.data(), n, n, n, false, false);
    benchmark::DoNotOptimize(y.data());
  }
}

}  // namespace

BENCHMARK(bench_conv2d_fwd_serial);
BENCHMARK(bench_conv2d_fwd_omp);
BENCHMARK(bench_conv2d_bwd_input_serial);
BENCHMARK(bench_conv2d_bwd_input_omp);
BENCHMARK(bench_tconv2d_fwd_serial);
BENCHMARK(bench_tconv2d_fwd_omp);
BENCHMARK(bench_matmul_serial)->Arg(64)->Arg(256);
BENCHMARK(bench_matmul_omp)->Arg(64)->Arg(256);

BENCHMARK_MAIN();
