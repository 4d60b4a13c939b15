#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include <gtest/gtest.h>

#include "promptseg/backbone/attention_mask.hpp"
#include "promptseg/backbone/backbone.hpp"
#include "promptseg/backbone/positional.hpp"
#include "promptseg/backbone/tokenizer.hpp"
#include "promptseg/error.hpp"
#include "support.hpp"

using namespace promptseg;
using namespace promptseg::backbone;

namespace {

const Backbone& tiny_backbone() {
  static const Backbone b(BackboneConfig::tiny());
  return b;
}

}  // namespace

TEST(Backbone, ReadoutShapesAtNativeSize) {
  const auto& b = tiny_backbone();
  const std::vector<int> layers{3, 1};
  const auto r = b.encode_image(fixtures::random_image(32, 32, 1), layers);
  EXPECT_EQ(r.grid, (GridSize{8, 8}));
  EXPECT_EQ(r.layers, layers);
  ASSERT_EQ(r.tokens.size(), 2u);
  for (const auto& t : r.tokens) {
    EXPECT_EQ(t.rows(), 65);
    EXPECT_EQ(t.cols(), 64);
  }
  EXPECT_EQ(r.image_embedding.size(), 32);
}

TEST(Backbone, NonSquareInputUsesInterpolatedGrid) {
  const std::vector<int> layers{0};
  const auto r = tiny_backbone().encode_image(fixtures::random_image(48, 20, 2), layers);
  EXPECT_EQ(r.grid, (GridSize{5, 12}));
  EXPECT_EQ(r.tokens[0].rows(), 61);
}

TEST(Backbone, RejectsBadSizesAndLayers) {
  const auto& b = tiny_backbone();
  const std::vector<int> ok{1};
  EXPECT_THROW(b.encode_image(fixtures::random_image(30, 32, 3), ok), SizingError);
  EXPECT_THROW(b.encode_image(Image(), ok), SizingError);
  const std::vector<int> too_deep{4};
  EXPECT_THROW(b.encode_image(fixtures::random_image(32, 32, 3), too_deep), ConfigError);
  const std::vector<int> negative{-1};
  EXPECT_THROW(b.encode_image(fixtures::random_image(32, 32, 3), negative), ConfigError);
}

TEST(Backbone, DeterministicAcrossInstances) {
  const Backbone other(BackboneConfig::tiny());
  EXPECT_EQ(other.parameter_checksum(), tiny_backbone().parameter_checksum());
  const Image img = fixtures::random_image(32, 32, 4);
  EXPECT_EQ(other.encode_image_embedding(img), tiny_backbone().encode_image_embedding(img));
  EXPECT_EQ(other.encode_text("red circle"), tiny_backbone().encode_text("red circle"));
}

TEST(Backbone, EncodingLeavesWeightsUntouched) {
  const auto& b = tiny_backbone();
  const auto before = b.parameter_checksum();
  (void)b.encode_image_embedding(fixtures::random_image(32, 32, 5));
  (void)b.encode_text("a photo of a dog");
  EXPECT_EQ(b.parameter_checksum(), before);
}

TEST(Backbone, TextEncoding) {
  const auto& b = tiny_backbone();
  EXPECT_THROW(b.encode_text(""), InputError);
  const auto a = b.encode_text("red circle");
  const auto c = b.encode_text("blue square");
  EXPECT_EQ(a.size(), 32);
  EXPECT_NE(a, c);
  std::string long_prompt;
  for (int i = 0; i < 40; ++i) long_prompt += "word ";
  EXPECT_NO_THROW(b.encode_text(long_prompt));
}

TEST(Backbone, ImagenetStandInSharesTextTowerOnly) {
  auto cfg = BackboneConfig::tiny();
  cfg.variant = Variant::ImagenetVitStandIn;
  const Backbone other(cfg);
  EXPECT_EQ(other.encode_text("green triangle"), tiny_backbone().encode_text("green triangle"));
  const Image img = fixtures::random_image(32, 32, 6);
  EXPECT_NE(other.encode_image_embedding(img), tiny_backbone().encode_image_embedding(img));
}

TEST(Backbone, PretrainedVariantLoadsSavedWeights) {
  const auto path = std::filesystem::temp_directory_path() / "promptseg_tiny_weights.pst";
  tiny_backbone().save_weights(path);
  auto cfg = BackboneConfig::tiny();
  cfg.variant = Variant::PretrainedDualEncoder;
  cfg.weights_path = path.string();
  const Backbone loaded(cfg);
  EXPECT_EQ(loaded.parameter_checksum(), tiny_backbone().parameter_checksum());
  const Image img = fixtures::random_image(32, 32, 7);
  EXPECT_EQ(loaded.encode_image_embedding(img), tiny_backbone().encode_image_embedding(img));
  std::filesystem::remove(path);

  auto missing = BackboneConfig::tiny();
  missing.variant = Variant::PretrainedDualEncoder;
  EXPECT_THROW(Backbone{missing}, ConfigError);
}

TEST(Backbone, MetadataDescribesReadoutConvention) {
  const auto m = tiny_backbone().metadata();
  EXPECT_EQ(m["interpolation_kernel"], "bilinear");
  EXPECT_EQ(m["readout_convention"], "post-block output, 0-indexed");
  EXPECT_EQ(config_from_json(m).patch_size, 4);
}

TEST(Backbone, VitB16Geometry) {
  const auto c = BackboneConfig::vit_b16();
  EXPECT_EQ(c.patch_size, 16);
  EXPECT_EQ(c.vision_width, 768);
  EXPECT_EQ(c.embed_dim, 512);
  EXPECT_EQ(c.native_image_size(), 224);
}

TEST(Positional, IdentityAtTrainedGrid) {
  const MatrixF pe = fixtures::random_matrix(1 + 16, 5, 8).cast<float>();
  EXPECT_EQ(interpolate_positional_embeddings(pe, GridSize{4, 4}), pe);
}

TEST(Positional, ClsRowKeptAndConstantsPreserved) {
  MatrixF pe(1 + 9, 3);
  pe.row(0) << 7.f, 8.f, 9.f;
  for (int i = 1; i < 10; ++i) pe.row(i) << 1.f, -2.f, 0.5f;
  const auto out = interpolate_positional_embeddings(pe, GridSize{5, 7});
  ASSERT_EQ(out.rows(), 36);
  EXPECT_EQ(out.row(0), pe.row(0));
  for (int i = 1; i < out.rows(); ++i) {
    EXPECT_FLOAT_EQ(out(i, 0), 1.f);
    EXPECT_FLOAT_EQ(out(i, 1), -2.f);
  }
}

TEST(Positional, UpsampledGradientIsMonotone) {
  MatrixF pe(1 + 4, 1);
  pe << 0.f, 0.f, 1.f, 0.f, 1.f;  // 2x2 grid, value grows with x
  const auto out = interpolate_positional_embeddings(pe, GridSize{2, 4});
  for (int x = 0; x + 1 < 4; ++x) EXPECT_LE(out(1 + x, 0), out(1 + x + 1, 0));
}

TEST(AttentionMask, ClsRowRestrictedOnlyAtLayer) {
  AttentionMaskPolicy p;
  p.mode = AttentionMaskMode::ClsOnlyLayer;
  p.layer = 2;
  p.grid_mask = Mask(2, 2, 0);
  p.grid_mask.at(0, 1) = 1;
  MatrixF s = MatrixF::Zero(5, 5);
  apply_attention_mask(p, 1, s);
  EXPECT_TRUE((s.array() == 0.f).all());
  apply_attention_mask(p, 2, s);
  const float inf = -std::numeric_limits<float>::infinity();
  EXPECT_EQ(s(0, 0), 0.f);
  EXPECT_EQ(s(0, 2), 0.f);
  EXPECT_EQ(s(0, 1), inf);
  EXPECT_EQ(s(0, 3), inf);
  EXPECT_EQ(s(0, 4), inf);
  EXPECT_TRUE((s.bottomRows(4).array() == 0.f).all());
}

TEST(AttentionMask, AllTokensRestrictsEveryRow) {
  AttentionMaskPolicy p;
  p.mode = AttentionMaskMode::AllTokensAllLayers;
  p.grid_mask = Mask(2, 1, 0);
  p.grid_mask.at(0, 0) = 1;
  MatrixF s = MatrixF::Zero(3, 3);
  apply_attention_mask(p, 0, s);
  for (int r = 0; r < 3; ++r) EXPECT_TRUE(std::isinf(s(r, 2)));
}

TEST(AttentionMask, ValidateRejectsDegenerateAndMisSized) {
  AttentionMaskPolicy p;
  p.mode = AttentionMaskMode::ClsOnlyAllLayers;
  p.grid_mask = Mask(8, 8, 0);
  EXPECT_THROW(p.validate(GridSize{8, 8}), DegenerateMaskError);
  p.grid_mask = Mask(4, 4, 1);
  EXPECT_THROW(p.validate(GridSize{8, 8}), InputError);
}

TEST(AttentionMask, FullMaskMatchesUnmaskedEncoding) {
  AttentionMaskPolicy p;
  p.mode = AttentionMaskMode::AllTokensAllLayers;
  p.grid_mask = Mask(8, 8, 1);
  const Image img = fixtures::random_image(32, 32, 9);
  EXPECT_EQ(tiny_backbone().encode_image_embedding(img, p), tiny_backbone().encode_image_embedding(img));
  p.grid_mask = fixtures::rect_mask(8, 8, 0, 0, 3, 3);
  EXPECT_NE(tiny_backbone().encode_image_embedding(img, p), tiny_backbone().encode_image_embedding(img));
}

TEST(Tokenizer, PreTokenizeSplitsAndLowercases) {
  const auto pieces = pre_tokenize("  A Photo, of 2 DOGS!  ");
  const std::vector<std::string> want{"a", "photo", ",", "of", "2", "dogs", "!"};
  EXPECT_EQ(pieces, want);
}

TEST(Tokenizer, HashTokenizerRangeAndDeterminism) {
  const HashTokenizer t(1024);
  const auto ids = t.encode("red circle on the left");
  EXPECT_EQ(ids.size(), 5u);
  for (int id : ids) {
    EXPECT_GE(id, 0);
    EXPECT_LT(id, 1022);
  }
  EXPECT_EQ(ids, t.encode("Red  circle on the LEFT"));
}

TEST(Tokenizer, ContextWrappingAndTruncation) {
  const HashTokenizer t(1024);
  const auto short_ids = tokenize_for_context(t, "red circle", 8);
  EXPECT_EQ(short_ids.ids.size(), 8u);
  EXPECT_EQ(short_ids.ids[0], t.start_token());
  EXPECT_EQ(short_ids.end_position, 3);
  EXPECT_EQ(short_ids.ids[3], t.end_token());
  EXPECT_FALSE(short_ids.truncated);
  const auto long_ids = tokenize_for_context(t, "a b c d e f g h i j", 8);
  EXPECT_TRUE(long_ids.truncated);
  EXPECT_EQ(long_ids.end_position, 7);
  EXPECT_EQ(long_ids.ids[7], t.end_token());
}

TEST(Tokenizer, BpeAppliesMergesByRank) {
  const BpeTokenizer bpe({{"l", "o"}, {"lo", "w</w>"}, {"e", "r</w>"}});
  EXPECT_EQ(bpe.vocab_size(), 512 + 3 + 2);
  const auto low = bpe.encode("low");
  EXPECT_EQ(low.size(), 1u);
  const auto lower = bpe.encode("lower");
  EXPECT_EQ(lower.size(), 3u);  // lo, w, er</w>
  EXPECT_NE(bpe.encode("low"), bpe.encode("lowe"));
}

TEST(Tokenizer, BpeFromFileSkipsVersionLine) {
  const auto path = std::filesystem::temp_directory_path() / "promptseg_merges.txt";
  std::ofstream(path) << "#version: 0.2\nl o\nlo w</w>\n";
  const auto bpe = BpeTokenizer::from_file(path);
  EXPECT_EQ(bpe.vocab_size(), 512 + 2 + 2);
  EXPECT_EQ(bpe.encode("low").size(), 1u);
  std::filesystem::remove(path);
}
