#include <gtest/gtest.h>

#include "promptseg/conditioning.hpp"
#include "promptseg/decoder/decoder.hpp"
#include "promptseg/error.hpp"
#include "promptseg/pipeline.hpp"
#include "support.hpp"

using namespace promptseg;
using namespace promptseg::conditioning;
using fixtures::random_image;
using fixtures::rect_mask;

namespace {

const backbone::Backbone& tiny() {
  static const backbone::Backbone b(backbone::BackboneConfig::tiny());
  return b;
}

ConditionalVector vec(std::initializer_list<double> v) {
  ConditionalVector c;
  c.values = VectorD::Map(v.begin(), static_cast<Eigen::Index>(v.size()));
  return c;
}

}  // namespace

TEST(Interpolate, EndpointsReturnOperandsBitwise) {
  const auto s = vec({0.1, -3.0, 1e-17});
  const auto t = vec({0.7, 2.0, -5.5});
  EXPECT_EQ(interpolate(s, t, 1.0).values, s.values);
  EXPECT_EQ(interpolate(s, t, 0.0).values, t.values);
}

TEST(Interpolate, MidpointStaysBetweenEndpoints) {
  const auto s = vec({0.1, -3.0, 4.0});
  const auto t = vec({0.7, 2.0, 4.0});
  const auto m = interpolate(s, t, 0.25);
  EXPECT_NEAR(m.values[0], 0.25 * 0.1 + 0.75 * 0.7, 1e-15);
  EXPECT_EQ(m.values[2], 4.0);
  for (int i = 0; i < 3; ++i) {
    EXPECT_GE(m.values[i], std::min(s.values[i], t.values[i]));
    EXPECT_LE(m.values[i], std::max(s.values[i], t.values[i]));
  }
}

TEST(Interpolate, RejectsBadWeightAndDimension) {
  EXPECT_THROW(interpolate(vec({1}), vec({2}), 1.5), InputError);
  EXPECT_THROW(interpolate(vec({1}), vec({2}), -0.1), InputError);
  EXPECT_THROW(interpolate(vec({1}), vec({2, 3}), 0.5), InputError);
}

TEST(Interpolate, WeightSamplesAreUniformOnUnitInterval) {
  std::mt19937_64 rng(3);
  double sum = 0;
  for (int i = 0; i < 4000; ++i) {
    const double a = sample_interpolation_weight(rng);
    ASSERT_GE(a, 0.0);
    ASSERT_LE(a, 1.0);
    sum += a;
  }
  EXPECT_NEAR(sum / 4000, 0.5, 0.02);
}

TEST(Conditioner, TextAndVisualLiveInJointSpace) {
  const Conditioner c(tiny());
  const auto t = c.from_text("red circle");
  const auto v = c.from_visual(random_image(32, 32, 1), rect_mask(32, 32, 4, 4, 20, 20), "crop");
  EXPECT_EQ(t.values.size(), tiny().config().embed_dim);
  EXPECT_EQ(v.values.size(), tiny().config().embed_dim);
  EXPECT_THROW(c.from_visual(random_image(32, 32, 1), Mask(32, 32, 0), "crop"), DegenerateMaskError);
  EXPECT_THROW(c.from_visual(random_image(32, 32, 1), Mask(16, 32, 1), "none"), InputError);
}

TEST(Conditioner, InterpolatedSpecEndpointsMatchPureModalities) {
  const Conditioner c(tiny());
  const Image img = random_image(32, 32, 2);
  const Mask m = rect_mask(32, 32, 3, 5, 22, 27);
  const auto text = c.condition(PromptSpec::from_text("blue square"));
  const auto visual = c.condition(PromptSpec::from_support(img, m));
  EXPECT_EQ(c.condition(PromptSpec::interpolated("blue square", img, m, 0.0)).values, text.values);
  EXPECT_EQ(c.condition(PromptSpec::interpolated("blue square", img, m, 1.0)).values, visual.values);
  const auto mid = c.condition(PromptSpec::interpolated("blue square", img, m, 0.5));
  EXPECT_NE(mid.values, text.values);
  EXPECT_NE(mid.values, visual.values);
}

TEST(Conditioner, DecoderOutputsAtEndpointsMatchBitwise) {
  const decoder::Decoder dec(decoder::DecoderConfig::tiny_for_backbone(tiny().config()), 5);
  const Segmenter seg(tiny(), dec);
  const Image query = random_image(32, 32, 3);
  const Image img = random_image(32, 32, 4);
  const Mask m = rect_mask(32, 32, 8, 8, 23, 23);
  EXPECT_EQ(seg.probabilities(query, PromptSpec::interpolated("green triangle", img, m, 0.0)),
            seg.probabilities(query, PromptSpec::from_text("green triangle")));
  EXPECT_EQ(seg.probabilities(query, PromptSpec::interpolated("green triangle", img, m, 1.0)),
            seg.probabilities(query, PromptSpec::from_support(img, m)));
}

TEST(PromptSpec, ValidateAndJson) {
  PromptSpec bad;
  bad.kind = PromptSpec::Kind::Visual;
  EXPECT_THROW(bad.validate(), InputError);
  EXPECT_THROW(PromptSpec::interpolated("x", random_image(4, 4, 1), Mask(4, 4, 1), 2.0).validate(), InputError);
  const auto j = to_json(PromptSpec::from_text("a dog"));
  const auto back = prompt_from_json(j, false);
  EXPECT_EQ(back.kind, PromptSpec::Kind::Text);
  EXPECT_EQ(*back.text, "a dog");
}
