#include <benchmark/benchmark.h>

#include <random>

#include "fedrecon/kspace.hpp"

namespace {

using namespace fedrecon;

void BM_Fft2(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  kspace::ComplexImage img(n, n);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (auto& v : img.re) v = u(rng);
  for (auto _ : state) benchmark::DoNotOptimize(kspace::fft2(img));
}
BENCHMARK(BM_Fft2)->RangeMultiplier(2)->Range(32, 256)->Unit(benchmark::kMicrosecond);

void BM_Acquire(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::vector<double> v(n * n, 0.5);
  const ad::Tensor ref({n, n}, std::move(v));
  kspace::Rng rng(2);
  const auto mask = kspace::make_mask(n, 4.0, 0.08, rng);
  for (auto _ : state) benchmark::DoNotOptimize(kspace::acquire(ref, mask, 0.01, rng));
}
BENCHMARK(BM_Acquire)->Arg(32)->Arg(64)->Unit(benchmark::kMicrosecond);

}  // namespace
