#include <benchmark/benchmark.h>

#include "tessera/attention.hpp"
#include "tessera/random.hpp"

using namespace tessera;

namespace {

Tensor random_tokens(std::int64_t n, std::int64_t d, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> x(static_cast<std::size_t>(n * d));
  for (auto& v : x) v = static_cast<float>(rng.normal());
  return Tensor::from_data({n, d}, std::move(x));
}

void BM_ExactAttention(benchmark::State& state) {
  NoGradGuard ng;
  const std::int64_t n = state.range(0);
  Tensor q = random_tokens(n, 32, 1), k = random_tokens(n, 32, 2), v = random_tokens(n, 32, 3);
  for (auto _ : state) benchmark::DoNotOptimize(exact_attention(q, k, v, 256));
  state.SetComplexityN(n);
}

void BM_ApproxAttention(benchmark::State& state) {
  NoGradGuard ng;
  const std::int64_t n = state.range(0);
  Tensor q = random_tokens(n, 32, 1), k = random_tokens(n, 32, 2), v = random_tokens(n, 32, 3);
  for (auto _ : state) benchmark::DoNotOptimize(approximate_attention(q, k, v, ApproxParams{}, 256));
  state.SetComplexityN(n);
}

}  // namespace

BENCHMARK(BM_ExactAttention)->RangeMultiplier(2)->Range(512, 4096)->Unit(benchmark::kMillisecond)->Complexity();
BENCHMARK(BM_ApproxAttention)->RangeMultiplier(2)->Range(512, 8192)->Unit(benchmark::kMillisecond)->Complexity();
