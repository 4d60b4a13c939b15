#include <benchmark/benchmark.h>

#include "promptseg/visual_prompts.hpp"

using namespace promptseg;

namespace {

void BM_ComposeRecipe(benchmark::State& state, const char* recipe) {
  Image img(352, 352, 0.f);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<float>(i % 255) / 255.f;
  Mask m(352, 352);
  for (int y = 100; y < 250; ++y)
    for (int x = 80; x < 200; ++x) m.at(y, x) = 1;
  const auto r = prompts::parse_recipe(recipe);
  for (auto _ : state) benchmark::DoNotOptimize(prompts::compose_prompt(img, m, r));
}
BENCHMARK_CAPTURE(BM_ComposeRecipe, none, "none")->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_ComposeRecipe, bg_blur, "bg_blur")->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_ComposeRecipe, best, prompts::RecipeRegistry::kBestRecipe)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
