// Serial reference vs OpenMP kernels on training-sized shapes.
// Args: rows, inner width, output width; the parallel runs also take a thread count.

#include <benchmark/benchmark.h>

#include "xview/kernels.hpp"
#include "xview/rng.hpp"

namespace {

using xview::Matrix;
namespace k = xview::kernels;

Matrix random(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  xview::SeededRng rng(seed);
  Matrix m(rows, cols);
  for (double& v : m.values()) v = rng.uniform(-1.0, 1.0);
  return m;
}

struct Shapes {
  Matrix x, w, dy, out, dx, gw;
  std::vector<double> bias, gb;

  explicit Shapes(const benchmark::State& s)
      : x(random(s.range(0), s.range(1), 1)),
        w(random(s.range(2), s.range(1), 2)),
        dy(random(s.range(0), s.range(2), 3)),
        out(s.range(0), s.range(2)),
        dx(s.range(0), s.range(1)),
        gw(s.range(2), s.range(1)),
        bias(s.range(2), 0.1),
        gb(s.range(2), 0.0) {}
};

template <bool Parallel>
void BM_Affine(benchmark::State& state) {
  Shapes s(state);
  if constexpr (Parallel) k::parallel::set_threads(static_cast<int>(state.range(3)));
  for (auto _ : state) {
    if constexpr (Parallel) k::parallel::affine(s.x, s.w, s.bias, s.out);
    else k::serial::affine(s.x, s.w, s.bias, s.out);
    benchmark::DoNotOptimize(s.out.values().data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0) * state.range(1) * state.range(2));
}

template <bool Parallel>
void BM_Backward(benchmark::State& state) {
  Shapes s(state);
  if constexpr (Parallel) k::parallel::set_threads(static_cast<int>(state.range(3)));
  for (auto _ : state) {
    if constexpr (Parallel) {
      k::parallel::affine_param_grad(s.x, s.dy, s.gw, s.gb);
      k::parallel::affine_input_grad(s.dy, s.w, s.dx);
    } else {
      k::serial::affine_param_grad(s.x, s.dy, s.gw, s.gb);
      k::serial::affine_input_grad(s.dy, s.w, s.dx);
    }
    benchmark::DoNotOptimize(s.dx.values().data());
  }
  state.SetItemsProcessed(state.iterations() * 2 * state.range(0) * state.range(1) * state.range(2));
}

template <bool Parallel>
void BM_Pairwise(benchmark::State& state) {
  const Matrix a = random(state.range(0), state.range(1), 4);
  const Matrix b = random(state.range(2), state.range(1), 5);
  Matrix out(state.range(0), state.range(2));
  if constexpr (Parallel) k::parallel::set_threads(static_cast<int>(state.range(3)));
  for (auto _ : state) {
    if constexpr (Parallel) k::parallel::pairwise_euclidean(a, b, out);
    else k::serial::pairwise_euclidean(a, b, out);
    benchmark::DoNotOptimize(out.values().data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0) * state.range(1) * state.range(2));
}

// Batch of 64 through a 128-wide layer, the full 400-record set, and a
// 200 x 200 query/gallery distance matrix.
void serial_shapes(benchmark::internal::Benchmark* b) {
  b->Args({64, 128, 128})->Args({400, 128, 128})->Args({200, 32, 200});
}
void parallel_shapes(benchmark::internal::Benchmark* b) {
  for (int t : {1, 2, 4})
    b->Args({64, 128, 128, t})->Args({400, 128, 128, t})->Args({200, 32, 200, t});
}

BENCHMARK(BM_Affine<false>)->Apply(serial_shapes);
BENCHMARK(BM_Affine<true>)->Apply(parallel_shapes);
BENCHMARK(BM_Backward<false>)->Apply(serial_shapes);
BENCHMARK(BM_Backward<true>)->Apply(parallel_shapes);
BENCHMARK(BM_Pairwise<false>)->Apply(serial_shapes);
BENCHMARK(BM_Pairwise<true>)->Apply(parallel_shapes);

}  // namespace

BENCHMARK_MAIN();
