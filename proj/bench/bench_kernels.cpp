// Serial reference vs OpenMP kernels.

#include "driftsphere/kernels.hpp"
#include "driftsphere/numerics.hpp"
#include "driftsphere/sphere.hpp"

#include <benchmark/benchmark.h>

using namespace driftsphere;
using kernels::Exec;

namespace {

Matrix random_unit_rows(Eigen::Index n, int d, std::uint64_t seed) {
  Rng rng(seed);
  Matrix m(n, d);
  for (Eigen::Index i = 0; i < n; ++i) m.row(i) = sample_uniform_sphere(d, rng).vec().transpose();
  return m;
}

Exec exec_of(const benchmark::State& state) { return state.range(0) == 0 ? Exec::serial : Exec::parallel; }

void BM_McThpIntegral(benchmark::State& state) {
  const ThpParams p(UnitVector::basis(8, 0), 16.0);
  const std::size_t n = static_cast<std::size_t>(state.range(1));
  for (auto _ : state) {
    auto est = kernels::mc_sphere_integral(8, n, 7, [&](const UnitVector& x) { return std::exp(thp_log_pdf(p, x)); },
                                           exec_of(state));
    benchmark::DoNotOptimize(est.integral);
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) * state.range(1));
}
BENCHMARK(BM_McThpIntegral)->ArgsProduct({{0, 1}, {1 << 16, 1 << 18}})->Unit(benchmark::kMillisecond);

void BM_KnnKth(benchmark::State& state) {
  const Matrix bank = random_unit_rows(state.range(1), 16, 1);
  const Matrix queries = random_unit_rows(1000, 16, 2);
  for (auto _ : state) {
    auto nn = kernels::knn_kth(bank, queries, 10, exec_of(state));
    benchmark::DoNotOptimize(nn.data());
  }
}
BENCHMARK(BM_KnnKth)->ArgsProduct({{0, 1}, {2000, 10000}})->Unit(benchmark::kMillisecond);

void BM_ThpSimilarity(benchmark::State& state) {
  const Matrix a = random_unit_rows(state.range(1), 16, 3);
  const Matrix b = random_unit_rows(state.range(1), 16, 4);
  for (auto _ : state) {
    Matrix s = kernels::thp_similarity(a, b, MetricConfig{}, exec_of(state));
    benchmark::DoNotOptimize(s.data());
  }
}
BENCHMARK(BM_ThpSimilarity)->ArgsProduct({{0, 1}, {256, 1024}})->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
