#include <benchmark/benchmark.h>

#include "latmap/mesh_fem.hpp"

using namespace latmap;

static void BM_MeshAnnulus(benchmark::State& state) {
  conformal::ReferenceAnnulus ref;
  ref.n_rho = static_cast<int>(state.range(0));
  ref.n_theta = 2 * ref.n_rho;
  for (auto _ : state) {
    auto mesh = fem::mesh_annulus_grid(ref);
    benchmark::DoNotOptimize(mesh.x.data());
  }
}
BENCHMARK(BM_MeshAnnulus)->Arg(48)->Arg(64);

static void BM_NeumannSolve(benchmark::State& state) {
  conformal::ReferenceAnnulus ref;
  ref.n_rho = static_cast<int>(state.range(0));
  ref.n_theta = 2 * ref.n_rho;
  const auto mesh = fem::mesh_annulus_grid(ref);
  const auto bc = fem::sample_neumann(7, 6, mesh.outer_perimeter);
  for (auto _ : state) {
    auto sol = fem::assemble_and_solve(mesh, bc);
    benchmark::DoNotOptimize(sol.u.data());
  }
}
BENCHMARK(BM_NeumannSolve)->Arg(48)->Arg(64)->Arg(96)->Unit(benchmark::kMillisecond);
