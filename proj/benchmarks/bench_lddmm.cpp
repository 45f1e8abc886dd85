#include <benchmark/benchmark.h>

#include "latmap/lddmm.hpp"
#include "latmap/rng.hpp"

using namespace latmap;

namespace {
lddmm::Mat2 circle_pts(int n, double r, double dx) {
  lddmm::Mat2 q(n, 2);
  for (int i = 0; i < n; ++i) {
    const double t = 2 * 3.14159265358979323846 * i / n;
    q(i, 0) = r * std::cos(t) + dx;
    q(i, 1) = r * std::sin(t);
  }
  return q;
}
}  // namespace

static void BM_FlowEnergyGradient(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const auto q0 = circle_pts(n, 1.0, 0.0);
  const auto target = circle_pts(n, 1.15, 0.1);
  lddmm::KernelConfig cfg;
  Rng rng(5);
  lddmm::Mat2 p0(n, 2);
  for (int i = 0; i < n; ++i) {
    p0(i, 0) = 0.01 * rng.uniform(-1.0, 1.0);
    p0(i, 1) = 0.01 * rng.uniform(-1.0, 1.0);
  }
  for (auto _ : state) {
    auto g = lddmm::energy_gradient(q0, p0, target, cfg);
    benchmark::DoNotOptimize(g.data());
  }
}
BENCHMARK(BM_FlowEnergyGradient)->Arg(64)->Arg(128)->Arg(256)->Unit(benchmark::kMillisecond);

static void BM_FlowInverse(benchmark::State& state) {
  const int n = 128;
  const auto q0 = circle_pts(n, 1.0, 0.0);
  const auto target = circle_pts(n, 1.1, 0.05);
  lddmm::KernelConfig cfg;
  cfg.max_iters = 20;
  const auto reg = lddmm::register_landmarks(q0, target, cfg);
  const auto pts = circle_pts(static_cast<int>(state.range(0)), 1.05, 0.0);
  for (auto _ : state) {
    auto back = lddmm::flow_inverse(reg.flow, pts);
    benchmark::DoNotOptimize(back.data());
  }
}
BENCHMARK(BM_FlowInverse)->Arg(1024)->Arg(4608)->Unit(benchmark::kMillisecond);
