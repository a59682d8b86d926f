// Parallel kernels against their serial references.
#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "malab/kernels.hpp"

namespace kn = malab::kernels;

namespace {

std::vector<float> noise(std::size_t n, unsigned seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<float> d(0.f, 1.f);
  std::vector<float> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

// Shapes from the desk config: batch 8 x context 256 rows, width 128.
template <bool Parallel>
void BM_gemm(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const auto n = static_cast<std::size_t>(state.range(1));
  const auto k = static_cast<std::size_t>(state.range(2));
  const auto a = noise(m * k, 1), b = noise(k * n, 2);
  std::vector<float> c(m * n);
  for (auto _ : state) {
    if constexpr (Parallel) {
      kn::gemm<float>(false, false, m, n, k, a.data(), b.data(), c.data(), false);
    } else {
      kn::reference::gemm<float>(false, false, m, n, k, a.data(), b.data(), c.data(), false);
    }
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * 2 * m * n * k));
  state.counters["threads"] = Parallel ? kn::max_threads() : 1;
}

template <bool Parallel>
void BM_softmax(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const auto n = static_cast<std::size_t>(state.range(1));
  const auto src = noise(m * n, 3);
  std::vector<float> x(src.size());
  for (auto _ : state) {
    x = src;
    if constexpr (Parallel) {
      kn::softmax_rows<float>(m, n, x.data());
    } else {
      kn::reference::softmax_rows<float>(m, n, x.data());
    }
    benchmark::DoNotOptimize(x.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * m * n));
}

void gemm_shapes(benchmark::internal::Benchmark* b) {
  b->Args({2048, 128, 128})->Args({2048, 344, 128})->Args({2048, 259, 128})->Args({256, 256, 32});
}

void softmax_shapes(benchmark::internal::Benchmark* b) {
  b->Args({4 * 256, 256})->Args({2048, 259});
}

}  // namespace

BENCHMARK(BM_gemm<true>)->Apply(gemm_shapes)->Name("gemm/parallel");
BENCHMARK(BM_gemm<false>)->Apply(gemm_shapes)->Name("gemm/reference");
BENCHMARK(BM_softmax<true>)->Apply(softmax_shapes)->Name("softmax/parallel");
BENCHMARK(BM_softmax<false>)->Apply(softmax_shapes)->Name("softmax/reference");

BENCHMARK_MAIN();
