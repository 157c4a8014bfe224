#include <benchmark/benchmark.h>

#include <vector>

#include "flexclip/kernels.hpp"
#include "flexclip/matrix.hpp"
#include "flexclip/retrieval.hpp"
#include "flexclip/rng.hpp"

using namespace flexclip;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  Rng rng(seed);
  return standard_normal(r, c, rng);
}

template <auto Kernel>
void BM_matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Matrix a = random_matrix(n, n, 1);
  const Matrix b = random_matrix(n, n, 2);
  Matrix out(n, n);
  for (auto _ : state) {
    Kernel(a, b, out);
    benchmark::DoNotOptimize(out.values().data());
  }
  state.SetItemsProcessed(state.iterations() * std::int64_t(n * n * n));
}

void BM_matmul_serial(benchmark::State& s) { BM_matmul<&kernels::serial::matmul>(s); }
void BM_matmul_omp(benchmark::State& s) { BM_matmul<&kernels::omp::matmul>(s); }

template <bool Parallel>
void BM_mean_ap(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Matrix q = random_matrix(n, 64, 3);
  const Matrix g = random_matrix(n, 64, 4);
  std::vector<data::ClassId> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = data::ClassId(i % 10);
  const retrieval::Relevance rel = [&](std::size_t a, std::size_t b) { return labels[a] == labels[b]; };
  for (auto _ : state) {
    auto r = Parallel ? retrieval::mean_ap(q, g, rel, retrieval::Direction::img2txt)
                      : retrieval::serial::mean_ap(q, g, rel, retrieval::Direction::img2txt);
    benchmark::DoNotOptimize(r.map);
  }
}

void BM_mean_ap_serial(benchmark::State& s) { BM_mean_ap<false>(s); }
void BM_mean_ap_omp(benchmark::State& s) { BM_mean_ap<true>(s); }

}  // namespace

BENCHMARK(BM_matmul_serial)->Arg(64)->Arg(256)->Arg(512);
BENCHMARK(BM_matmul_omp)->Arg(64)->Arg(256)->Arg(512);
BENCHMARK(BM_mean_ap_serial)->Arg(200)->Arg(1000);
BENCHMARK(BM_mean_ap_omp)->Arg(200)->Arg(1000);

BENCHMARK_MAIN();
