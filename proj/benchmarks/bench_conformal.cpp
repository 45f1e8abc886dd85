#include <benchmark/benchmark.h>

#include "latmap/complex_geom.hpp"
#include "latmap/conformal.hpp"

using namespace latmap;

static void BM_ExteriorFit(benchmark::State& state) {
  const auto sp = geom::sample_shape_params(11);
  const auto inner = geom::generate_inner_boundary(sp, 256);
  conformal::FitOptions opt;
  opt.modes = static_cast<int>(state.range(0));
  for (auto _ : state) {
    auto m = conformal::fit_exterior_map(inner, opt);
    benchmark::DoNotOptimize(m.residual);
  }
}
BENCHMARK(BM_ExteriorFit)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

static void BM_DomainToAnnulus(benchmark::State& state) {
  const auto sp = geom::sample_shape_params(11);
  const auto inner = geom::generate_inner_boundary(sp, 256);
  conformal::FitOptions opt;
  const auto m = conformal::fit_exterior_map(inner, opt);
  const geom::Cplx q = conformal::map_annulus_to_domain(m, geom::Cplx(1.4, 0.3));
  for (auto _ : state) {
    auto p = conformal::map_domain_to_annulus(m, q);
    benchmark::DoNotOptimize(p);
  }
}
BENCHMARK(BM_DomainToAnnulus);
