#include <benchmark/benchmark.h>

#include <Eigen/Dense>

#include "latmap/ot.hpp"
#include "latmap/rng.hpp"

using namespace latmap;

namespace {
std::vector<std::array<double, 2>> random_cloud(int n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::array<double, 2>> pts(n);
  for (auto& p : pts) {
    p[0] = rng.uniform(-2.0, 2.0);
    p[1] = rng.uniform(-2.0, 2.0);
  }
  return pts;
}
}  // namespace

static void BM_Assignment(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const auto x = random_cloud(n, 3);
  const auto y = random_cloud(n, 4);
  const Eigen::MatrixXd cost = ot::cost_matrix(x, y);
  for (auto _ : state) {
    auto t = ot::solve_assignment(cost);
    benchmark::DoNotOptimize(t.cost);
  }
}
BENCHMARK(BM_Assignment)->Arg(256)->Arg(1024)->Arg(4608)->Unit(benchmark::kMillisecond);
