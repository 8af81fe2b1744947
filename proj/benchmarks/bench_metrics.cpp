#include <benchmark/benchmark.h>

#include <random>

#include "fedrecon/metrics.hpp"

namespace {

using namespace fedrecon;

ad::Tensor image(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> v(n * n);
  for (auto& x : v) x = u(rng);
  return ad::Tensor({n, n}, std::move(v));
}

void BM_Ssim(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = image(n, 1), b = image(n, 2);
  for (auto _ : state) benchmark::DoNotOptimize(metrics::ssim(a, b, 1.0));
}
BENCHMARK(BM_Ssim)->Arg(32)->Arg(64)->Arg(128)->Unit(benchmark::kMicrosecond);

void BM_Psnr(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = image(n, 1), b = image(n, 2);
  for (auto _ : state) benchmark::DoNotOptimize(metrics::psnr(a, b, 1.0));
}
BENCHMARK(BM_Psnr)->Arg(64);

}  // namespace
