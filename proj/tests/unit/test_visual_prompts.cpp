#include <sstream>

#include <gtest/gtest.h>

#include "promptseg/error.hpp"
#include "promptseg/visual_prompts.hpp"
#include "support.hpp"

using namespace promptseg;
using namespace promptseg::prompts;
using fixtures::random_image;
using fixtures::rect_mask;

namespace {

const backbone::Backbone& tiny() {
  static const backbone::Backbone b(backbone::BackboneConfig::tiny());
  return b;
}

CompositionOptions tiny_options() {
  CompositionOptions o;
  o.output_size = 32;
  return o;
}

}  // namespace

TEST(Recipe, ParsesStepsAndAttention) {
  const auto r = parse_recipe("crop(large)+bg_intensity(0.25)+bg_blur(3)");
  ASSERT_EQ(r.steps.size(), 3u);
  EXPECT_EQ(r.steps[0].kind, CompositionStep::Kind::Crop);
  EXPECT_EQ(r.steps[0].context, CropContext::Large);
  EXPECT_DOUBLE_EQ(r.steps[1].alpha, 0.25);
  EXPECT_DOUBLE_EQ(*r.steps[2].sigma, 3.0);
  EXPECT_TRUE(r.has_crop());
  const auto m = parse_recipe("clip_mask(cls_layer,7)");
  EXPECT_EQ(m.attention, backbone::AttentionMaskMode::ClsOnlyLayer);
  EXPECT_EQ(m.attention_layer, 7);
  EXPECT_EQ(parse_recipe("clip_mask(all_all)").attention, backbone::AttentionMaskMode::AllTokensAllLayers);
}

TEST(Recipe, RejectsMalformed) {
  EXPECT_THROW(parse_recipe("bg_intensity(2)"), InputError);
  EXPECT_THROW(parse_recipe("sparkle"), InputError);
  EXPECT_THROW(parse_recipe("bg_intensity(0.1"), InputError);
}

TEST(Registry, StandardHasStudyRecipesAndBest) {
  const auto reg = RecipeRegistry::standard();
  const auto ids = reg.ids();
  EXPECT_NE(std::find(ids.begin(), ids.end(), RecipeRegistry::kBestRecipe), ids.end());
  EXPECT_NE(std::find(ids.begin(), ids.end(), "highlight"), ids.end());
  EXPECT_EQ(reg.label("crop"), "crop");
  EXPECT_EQ(reg.find("bg_blur+crop").steps.size(), 2u);  // parsed on lookup
  RecipeRegistry r = reg;
  EXPECT_THROW(r.add("crop", "again"), ConfigError);
}

TEST(Compose, ZeroIntensityZeroesBackgroundKeepsForeground) {
  const Image img = random_image(20, 16, 1);
  const Mask m = rect_mask(20, 16, 4, 3, 11, 9);
  const Image out = compose_prompt(img, m, parse_recipe("bg_intensity(0)"));
  ASSERT_EQ(out.width, img.width);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 20; ++x)
      for (int c = 0; c < 3; ++c) {
        if (m.at(y, x)) {
          EXPECT_EQ(out.at(y, x, c), img.at(y, x, c));
        } else {
          EXPECT_EQ(out.at(y, x, c), 0.f);
        }
      }
}

TEST(Compose, NoneIsIdentity) {
  const Image img = random_image(12, 12, 2);
  EXPECT_EQ(compose_prompt(img, rect_mask(12, 12, 1, 1, 4, 4), parse_recipe("none")), img);
}

TEST(Compose, BlurTouchesOnlyBackground) {
  const Image img = random_image(24, 24, 3);
  const Mask m = rect_mask(24, 24, 6, 6, 15, 15);
  const Image out = compose_prompt(img, m, parse_recipe("bg_blur(2)"), tiny_options());
  bool changed = false;
  for (int y = 0; y < 24; ++y)
    for (int x = 0; x < 24; ++x)
      for (int c = 0; c < 3; ++c) {
        if (m.at(y, x)) EXPECT_EQ(out.at(y, x, c), img.at(y, x, c));
        else changed |= out.at(y, x, c) != img.at(y, x, c);
      }
  EXPECT_TRUE(changed);
}

TEST(Compose, TightCropBoxEqualsMaskBounds) {
  Mask m(30, 20, 0);
  m.at(4, 7) = 1;
  m.at(13, 21) = 1;
  m.at(9, 12) = 1;
  EXPECT_EQ(crop_box(m, CropContext::Tight, 0.5), (Box{7, 4, 21, 13}));
  const Box large = crop_box(m, CropContext::Large, 0.5);
  EXPECT_EQ(large, (Box{0, 0, 29, 18}));
}

TEST(Compose, CropResizesToOutputSize) {
  const Image img = random_image(40, 40, 4);
  const Image out = compose_prompt(img, rect_mask(40, 40, 5, 5, 14, 24), parse_recipe("crop"), tiny_options());
  EXPECT_EQ(out.width, 32);
  EXPECT_EQ(out.height, 32);
}

TEST(Compose, Errors) {
  const Image img = random_image(8, 8, 5);
  EXPECT_THROW(compose_prompt(img, Mask(8, 8, 0), parse_recipe("crop")), DegenerateMaskError);
  EXPECT_THROW(compose_prompt(img, Mask(4, 8, 1), parse_recipe("none")), InputError);
  Mask bad(8, 8, 0);
  bad.bits[0] = 3;
  EXPECT_THROW(compose_prompt(img, bad, parse_recipe("none")), InputError);
}

TEST(Compose, OutlineAndDyeAndHighlightChangePixels) {
  const Image img = random_image(24, 24, 6);
  const Mask m = rect_mask(24, 24, 8, 8, 15, 15);
  for (const char* r : {"outline", "grayscale_dye", "highlight"}) {
    EXPECT_NE(compose_prompt(img, m, parse_recipe(r), tiny_options()), img) << r;
  }
}

TEST(Alignment, NoOpRecipeHasZeroDelta) {
  const std::vector<std::string> names{"red circle", "blue square", "green triangle"};
  for (int s = 0; s < 4; ++s) {
    const Image img = random_image(32, 32, 10 + s);
    const auto r = alignment_delta(tiny(), img, rect_mask(32, 32, 4, 4, 20, 20), names[s % 3], names,
                                   parse_recipe("none"), tiny_options());
    EXPECT_EQ(r.delta_p, 0.0);
    EXPECT_EQ(r.delta_prob, 0.0);
  }
}

TEST(Alignment, SoftmaxIsADistribution) {
  const std::vector<std::string> names{"red circle", "blue square"};
  const auto r = alignment_delta(tiny(), random_image(32, 32, 20), rect_mask(32, 32, 4, 4, 20, 20), "red circle",
                                 names, parse_recipe("crop"), tiny_options());
  ASSERT_EQ(r.softmax_distribution.size(), 2u);
  EXPECT_NEAR(r.softmax_distribution[0] + r.softmax_distribution[1], 1.0, 1e-12);
  EXPECT_THROW(alignment_delta(tiny(), random_image(32, 32, 20), rect_mask(32, 32, 4, 4, 20, 20), "cat", names,
                               parse_recipe("crop"), tiny_options()),
               InputError);
}

TEST(Alignment, AttentionMaskRecipeChangesEmbeddingOnShallowBackbone) {
  const Image img = random_image(32, 32, 21);
  const Mask m = rect_mask(32, 32, 0, 0, 15, 15);
  const auto plain = encode_visual_prompt(tiny(), img, m, parse_recipe("none"), tiny_options());
  const auto masked = encode_visual_prompt(tiny(), img, m, parse_recipe("clip_mask(cls_layer,11)"), tiny_options());
  EXPECT_NE(plain, masked);
}

TEST(Benchmark, OneRowPerRecipeSortedAndCsv) {
  std::vector<PromptSample> samples;
  for (int s = 0; s < 3; ++s) {
    samples.push_back({random_image(32, 32, 30 + s), rect_mask(32, 32, 2, 2, 17, 17), "red circle", {"blue square"}});
  }
  samples.push_back({random_image(32, 32, 40), Mask(32, 32, 0), "red circle", {"blue square"}});
  const auto reg = RecipeRegistry::standard();
  const std::vector<std::string> ids{"none", "crop", "bg_intensity(0)"};
  const auto table = run_prompt_benchmark(tiny(), samples, ids, reg, tiny_options(), 2);
  ASSERT_EQ(table.rows.size(), 3u);
  for (std::size_t i = 1; i < table.rows.size(); ++i) EXPECT_GE(table.rows[i - 1].mean_delta_p, table.rows[i].mean_delta_p);
  for (const auto& row : table.rows) {
    EXPECT_EQ(row.n_samples + row.skipped, 4u);
    if (row.recipe_id == "none") {
      EXPECT_EQ(row.mean_delta_p, 0.0);
    }
  }
  std::ostringstream csv;
  table.write_csv(csv);
  EXPECT_EQ(csv.str().rfind("recipe_id,n_samples,mean_delta_p,std,skipped", 0), 0u);
}
