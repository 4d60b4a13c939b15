#include <benchmark/benchmark.h>

#include "promptseg/backbone/backbone.hpp"

using namespace promptseg;

namespace {

Image noise(int side) {
  Image img(side, side, 0.f);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<float>((i * 2654435761u) % 1000) / 1000.f;
  return img;
}

void BM_EncodeImageVitB16(benchmark::State& state) {
  static const backbone::Backbone model(backbone::BackboneConfig::vit_b16());
  const Image img = noise(static_cast<int>(state.range(0)));
  const std::vector<int> layers{3, 7, 9};
  for (auto _ : state) benchmark::DoNotOptimize(model.encode_image(img, layers));
}
BENCHMARK(BM_EncodeImageVitB16)->Arg(224)->Arg(352)->Unit(benchmark::kMillisecond);

void BM_EncodeText(benchmark::State& state) {
  static const backbone::Backbone model(backbone::BackboneConfig::vit_b16());
  for (auto _ : state) benchmark::DoNotOptimize(model.encode_text("a photo of a red bicycle"));
}
BENCHMARK(BM_EncodeText)->Unit(benchmark::kMillisecond);

void BM_EncodeImageTiny(benchmark::State& state) {
  static const backbone::Backbone model(backbone::BackboneConfig::tiny());
  const Image img = noise(64);
  const std::vector<int> layers{1, 2, 3};
  for (auto _ : state) benchmark::DoNotOptimize(model.encode_image(img, layers));
}
BENCHMARK(BM_EncodeImageTiny)->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();
