#include <benchmark/benchmark.h>

#include <random>

#include "fedrecon/ops.hpp"

namespace {

using fedrecon::ad::Tensor;

Tensor random_tensor(fedrecon::ad::Shape shape, std::uint64_t seed, bool grad) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(fedrecon::ad::shape_numel(shape));
  for (auto& x : v) x = u(rng);
  return Tensor(std::move(shape), std::move(v), grad);
}

// Args: channels, image size.
void BM_Conv2dForward(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const auto n = static_cast<std::size_t>(state.range(1));
  const auto x = random_tensor({8, c, n, n}, 1, false);
  const auto k = random_tensor({c, c, 3, 3}, 2, false);
  const auto b = random_tensor({c}, 3, false);
  for (auto _ : state) benchmark::DoNotOptimize(fedrecon::ad::conv2d(x, k, b, 1, 1));
  state.SetItemsProcessed(state.iterations() * 8);
}
BENCHMARK(BM_Conv2dForward)->Args({8, 32})->Args({8, 64})->Args({32, 16})->Unit(benchmark::kMicrosecond);

void BM_Conv2dBackward(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const auto n = static_cast<std::size_t>(state.range(1));
  auto x = random_tensor({8, c, n, n}, 1, true);
  auto k = random_tensor({c, c, 3, 3}, 2, true);
  auto b = random_tensor({c}, 3, true);
  for (auto _ : state) {
    fedrecon::ad::backward(fedrecon::ad::sum(fedrecon::ad::conv2d(x, k, b, 1, 1)));
    x.zero_grad();
    k.zero_grad();
    b.zero_grad();
  }
  state.SetItemsProcessed(state.iterations() * 8);
}
BENCHMARK(BM_Conv2dBackward)->Args({8, 32})->Args({8, 64})->Args({32, 16})->Unit(benchmark::kMicrosecond);

}  // namespace
