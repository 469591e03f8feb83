// Serial reference kernels against their OpenMP counterparts.
//
//   ./bench_kernels --benchmark_filter=conv
//   OMP_NUM_THREADS=4 ./bench_kernels

#include <benchmark/benchmark.h>

#include "gradprobe/datasets.hpp"
#include "gradprobe/kernels.hpp"
#include "gradprobe/uncertainty.hpp"

using namespace gradprobe;

namespace {

std::vector<double> random_values(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

template <bool Parallel>
void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_values(n * n, 1), b = random_values(n * n, 2);
  std::vector<double> c(n * n);
  for (auto _ : state) {
    if constexpr (Parallel)
      kernels::parallel::matmul(a, b, c, n, n, n);
    else
      kernels::serial::matmul(a, b, c, n, n, n);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(2 * n * n * n));
}

template <bool Parallel>
void BM_ConvForward(benchmark::State& state) {
  const auto batch = static_cast<std::size_t>(state.range(0));
  const auto g = kernels::make_conv_geometry(batch, 3, 32, 32, 16, 3, 3, 1, kernels::Padding::same);
  const auto in = random_values(g.input_size(), 3), k = random_values(g.kernel_size(), 4);
  std::vector<double> out(g.output_size());
  for (auto _ : state) {
    if constexpr (Parallel)
      kernels::parallel::conv2d_forward(g, in, k, out);
    else
      kernels::serial::conv2d_forward(g, in, k, out);
    benchmark::DoNotOptimize(out.data());
  }
}

template <bool Parallel>
void BM_ConvBackward(benchmark::State& state) {
  const auto batch = static_cast<std::size_t>(state.range(0));
  const auto g = kernels::make_conv_geometry(batch, 3, 32, 32, 16, 3, 3, 1, kernels::Padding::same);
  const auto in = random_values(g.input_size(), 3), k = random_values(g.kernel_size(), 4);
  const auto gout = random_values(g.output_size(), 5);
  std::vector<double> gin(g.input_size()), gk(g.kernel_size());
  for (auto _ : state) {
    if constexpr (Parallel) {
      kernels::parallel::conv2d_backward_input(g, gout, k, gin);
      kernels::parallel::conv2d_backward_kernels(g, gout, in, gk);
    } else {
      kernels::serial::conv2d_backward_input(g, gout, k, gin);
      kernels::serial::conv2d_backward_kernels(g, gout, in, gk);
    }
    benchmark::DoNotOptimize(gk.data());
  }
}

void BM_Extract(benchmark::State& state) {
  const int workers = static_cast<int>(state.range(0));
  const Shape shape{3, 16, 16};
  const Model model = Model::build(ModelSpec::reference(shape, 4), 7);
  const auto data = synth_blobs(4, 32, shape, 8);
  const auto label = ConfoundingLabel::all_ones(4);
  for (auto _ : state) {
    auto features = workers == 0 ? extract_features_serial(model, data.images, label)
                                 : extract_features(model, data.images, label, {}, workers);
    benchmark::DoNotOptimize(features.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(data.size()));
}

}  // namespace

BENCHMARK(BM_Matmul<false>)->Arg(64)->Arg(256);
BENCHMARK(BM_Matmul<true>)->Arg(64)->Arg(256);
BENCHMARK(BM_ConvForward<false>)->Arg(8)->Arg(64);
BENCHMARK(BM_ConvForward<true>)->Arg(8)->Arg(64);
BENCHMARK(BM_ConvBackward<false>)->Arg(8)->Arg(64);
BENCHMARK(BM_ConvBackward<true>)->Arg(8)->Arg(64);
// 0 = serial reference, otherwise the OpenMP worker count
BENCHMARK(BM_Extract)->Arg(0)->Arg(1)->Arg(2)->Arg(4);

BENCHMARK_MAIN();
