// Serial reference path against the OpenMP path for each data-parallel kernel.
// The second benchmark argument selects the path: 0 serial, 1 parallel.

#include <benchmark/benchmark.h>

#include <cmath>
#include <random>
#include <vector>

#include "skytrack/kernels.hpp"

using namespace skytrack;

namespace {

Exec exec_of(const benchmark::State& state) { return state.range(1) == 0 ? Exec::serial : Exec::parallel; }

Grid noise_grid(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  Grid out(rows, cols);
  for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] = g(rng);
  return out;
}

RowMatrix points(Eigen::Index n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  RowMatrix out(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) out.row(i) << u(rng), u(rng);
  return out;
}

void BM_WindowSolve(benchmark::State& state) {
  const auto side = static_cast<Eigen::Index>(state.range(0));
  const Grid ix = noise_grid(side * 3 / 4, side, 1), iy = noise_grid(side * 3 / 4, side, 2),
             it = noise_grid(side * 3 / 4, side, 3);
  const Grid w = Grid::Ones(ix.rows(), ix.cols());
  for (auto _ : state) {
    auto r = kernels::weighted_window_solve(ix, iy, it, w, 16, 1e-8, 1.0, exec_of(state));
    benchmark::DoNotOptimize(r.u.data());
  }
  state.SetItemsProcessed(state.iterations() * ix.size());
}

void BM_BetaResponsibilities(benchmark::State& state) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.01, 0.99);
  std::vector<double> x(static_cast<std::size_t>(state.range(0)));
  for (auto& v : x) v = u(rng);
  const std::vector<double> log_prior{std::log(0.4), std::log(0.6)}, alpha{3.0, 12.0}, beta{10.0, 4.0};
  RowMatrix out;
  for (auto _ : state) {
    kernels::beta_responsibilities(x, log_prior, alpha, beta, out, exec_of(state));
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_KernelMatrix(benchmark::State& state) {
  const RowMatrix a = points(state.range(0), 5);
  const KernelSpec rbf{KernelKind::rbf, 4.0, 0.0, 2};
  for (auto _ : state) {
    auto k = kernels::kernel_matrix(a, a, rbf, exec_of(state));
    benchmark::DoNotOptimize(k.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0) * state.range(0));
}

void BM_KernelExpansion(benchmark::State& state) {
  const RowMatrix train = points(200, 6), query = points(state.range(0), 7);
  const RowMatrix coef = RowMatrix::Random(200, 2);
  const Eigen::VectorXd bias = Eigen::VectorXd::Zero(2);
  const KernelSpec rbf{KernelKind::rbf, 4.0, 0.0, 2};
  for (auto _ : state) {
    auto f = kernels::kernel_expansion(train, coef, bias, query, rbf, exec_of(state));
    benchmark::DoNotOptimize(f.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

}  // namespace

BENCHMARK(BM_WindowSolve)->ArgsProduct({{80, 160}, {0, 1}})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_BetaResponsibilities)->ArgsProduct({{4800, 100000}, {0, 1}})->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_KernelMatrix)->ArgsProduct({{200, 800}, {0, 1}})->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_KernelExpansion)->ArgsProduct({{4800}, {0, 1}})->Unit(benchmark::kMicrosecond);

BENCHMARK_MAIN();
