#include <benchmark/benchmark.h>

#include "tessera/image.hpp"
#include "tessera/model.hpp"
#include "tessera/random.hpp"
#include "tessera/tiling.hpp"

using namespace tessera;

namespace {

ImageTensor noise_image(std::int64_t side, std::uint64_t seed) {
  Rng rng(seed);
  ImageTensor img(side, side, 3);
  for (auto& v : img.data) v = static_cast<float>(rng.uniform());
  return img;
}

void BM_PartitionReassemble(benchmark::State& state) {
  NoGradGuard ng;
  const ImageTensor img = noise_image(state.range(0), 7);
  for (auto _ : state) {
    PatchBatch pb = partition(img, 256);
    benchmark::DoNotOptimize(reassemble(pb.patches, pb.layout));
  }
  state.SetBytesProcessed(state.iterations() * img.size() * static_cast<std::int64_t>(sizeof(float)));
}

void BM_ToyDehaze(benchmark::State& state) {
  const DehazeModel model(toy_config());
  const ImageTensor img = noise_image(state.range(0), 11);
  for (auto _ : state) benchmark::DoNotOptimize(model.dehaze(img));
  state.counters["pixels"] = static_cast<double>(img.height * img.width);
}

}  // namespace

BENCHMARK(BM_PartitionReassemble)->Arg(1000)->Arg(2048)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ToyDehaze)->Arg(256)->Arg(512)->Arg(1024)->Unit(benchmark::kMillisecond);
