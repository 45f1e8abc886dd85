#include <benchmark/benchmark.h>

#include "latmap/latent.hpp"
#include "latmap/nn.hpp"
#include "latmap/rng.hpp"

using namespace latmap;

namespace {
std::vector<latent::LatentSample> synthetic_samples(const conformal::ReferenceAnnulus& ref, int n,
                                                    int geo_dim) {
  Rng rng(77);
  std::vector<latent::LatentSample> out(n);
  for (auto& s : out) {
    s.u0.resize(ref.node_count());
    for (int i = 0; i < s.u0.size(); ++i) s.u0[i] = rng.uniform(-1.0, 1.0);
    s.bc0.resize(ref.n_theta);
    for (int i = 0; i < s.bc0.size(); ++i) s.bc0[i] = rng.uniform(-1.0, 1.0);
    if (geo_dim > 0) {
      s.geo.resize(geo_dim);
      for (int i = 0; i < geo_dim; ++i) s.geo[i] = rng.uniform(-1.0, 1.0);
    }
  }
  return out;
}
}  // namespace

static void BM_TrainEpoch(benchmark::State& state) {
  conformal::ReferenceAnnulus ref;
  nn::TrainConfig cfg;
  cfg.epochs = 1;
  cfg.val_every = 1 << 20;
  const int geo_dim = static_cast<int>(state.range(0));
  const auto samples = synthetic_samples(ref, 16, geo_dim);
  auto model = nn::make_model(ref, geo_dim, cfg);
  auto adam = nn::make_adam_state(model);
  for (auto _ : state) {
    auto r = nn::train(model, adam, samples, cfg, 0);
    benchmark::DoNotOptimize(r.epochs_done);
  }
}
BENCHMARK(BM_TrainEpoch)->Arg(0)->Arg(10)->Unit(benchmark::kMillisecond);
