#include <benchmark/benchmark.h>

#include "fedrecon/crosssite.hpp"
#include "fedrecon/fl.hpp"

namespace {

using namespace fedrecon;

sites::SiteDataset site(const char* id, std::size_t n, std::size_t size) {
  for (const auto& p : sites::default_profiles()) {
    if (p.site_id == id) return sites::generate_site(p, n, 2, size, {});
  }
  return {};
}

// One local epoch over 8 images: a single Adam step at batch size 8.
void BM_TrainStep(benchmark::State& state) {
  fl::FLConfig cfg;
  cfg.image_size = static_cast<std::size_t>(state.range(0));
  cfg.local_epochs = 1;
  cfg.global_rounds = 1;
  const auto a = site("A", 8, cfg.image_size);
  for (auto _ : state) benchmark::DoNotOptimize(fl::train_centralized(cfg, a));
}
BENCHMARK(BM_TrainStep)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

// One federated round with the alignment sub-steps, two sources.
void BM_FlmrcmRound(benchmark::State& state) {
  fl::FLConfig cfg;
  cfg.image_size = 32;
  cfg.local_epochs = 1;
  cfg.global_rounds = 1;
  const auto a = site("A", 8, 32), b = site("B", 8, 32), t = site("D", 8, 32);
  for (auto _ : state) benchmark::DoNotOptimize(crosssite::run_flmrcm(cfg, {&a, &b}, t));
}
BENCHMARK(BM_FlmrcmRound)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
