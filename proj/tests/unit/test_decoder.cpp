#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "gradcheck.hpp"
#include "promptseg/decoder/checkpoint.hpp"
#include "promptseg/decoder/decoder.hpp"
#include "promptseg/error.hpp"
#include "promptseg/tensor_archive.hpp"

using namespace promptseg;
using namespace promptseg::decoder;

namespace {

DecoderConfig reference() { return DecoderConfig::for_backbone(backbone::BackboneConfig::vit_b16()); }

std::filesystem::path temp(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("promptseg_dec_" + name);
}

}  // namespace

TEST(DecoderConfig, ReferenceDefaults) {
  const auto c = reference();
  EXPECT_EQ(c.token_dim, 64);
  EXPECT_EQ(c.readout_layers, (std::vector<int>{3, 7, 9}));
  EXPECT_EQ(c.num_blocks(), 3);
  EXPECT_EQ(c.consumption_order(), (std::vector<std::size_t>{2, 1, 0}));
  auto s = c;
  s.skip_order = SkipOrder::ShallowestFirst;
  EXPECT_EQ(s.consumption_order(), (std::vector<std::size_t>{0, 1, 2}));
}

TEST(DecoderConfig, ScaledReadoutsForShallowBackbone) {
  EXPECT_EQ(DecoderConfig::for_backbone(backbone::BackboneConfig::tiny()).readout_layers, (std::vector<int>{1, 2, 3}));
  EXPECT_EQ(DecoderConfig::deconv_for_backbone(backbone::BackboneConfig::vit_b16()).readout_layers,
            (std::vector<int>{11}));
}

TEST(DecoderConfig, ValidateRejectsInconsistentConfigs) {
  auto c = reference();
  c.heads = 5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = reference();
  c.blocks = 2;
  EXPECT_THROW(c.validate(), ConfigError);
  c = reference();
  c.readout_layers = {7, 3};
  EXPECT_THROW(c.validate(), ConfigError);
  c = DecoderConfig::deconv_for_backbone(backbone::BackboneConfig::vit_b16());
  c.readout_layers = {3, 9};
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(Decoder(c, 1), ConfigError);
}

TEST(DecoderConfig, JsonRoundTripAndHash) {
  auto c = reference();
  c.skip_order = SkipOrder::ShallowestFirst;
  const auto back = decoder_config_from_json(to_json(c));
  EXPECT_EQ(back.hash(), c.hash());
  EXPECT_EQ(back.skip_order, SkipOrder::ShallowestFirst);
  EXPECT_NE(reference().hash(), c.hash());
}

TEST(ParameterReport, ReferenceTotalIsFullyAttributed) {
  const Decoder d(reference(), 1);
  const auto r = d.parameter_report();
  EXPECT_EQ(r.total, 1'073'153u);
  EXPECT_EQ(r.total, d.params().size());
  ASSERT_TRUE(r.target.has_value());
  EXPECT_EQ(*r.target, 1'122'305u);
  EXPECT_EQ(r.unattributed(), 0);
  long long sum = 0;
  for (const auto& a : r.attributions) sum += a.delta;
  EXPECT_EQ(sum, -49'152);
  EXPECT_FALSE(r.pretty().empty());
  EXPECT_EQ(r.to_json()["total"], 1'073'153u);
}

TEST(ParameterReport, ItemizedCounts) {
  const auto r = Decoder(reference(), 1).parameter_report();
  std::size_t proj = 0, film = 0, blocks = 0, head = 0;
  for (const auto& it : r.items) {
    if (it.submodule.starts_with("readout projection")) proj += it.count;
    else if (it.submodule.starts_with("film")) film += it.count;
    else if (it.submodule.starts_with("transformer block")) blocks += it.count;
    else if (it.submodule == "output head") head += it.count;
  }
  EXPECT_EQ(proj, 3u * (768 * 64 + 64));
  EXPECT_EQ(film, 2u * (512 * 64 + 64));
  EXPECT_EQ(head, 64u * 256 + 1);
  const std::size_t per_block = 2 * 128 + (64 * 192 + 192) + (64 * 64 + 64) + (64 * 2048 + 2048) + (2048 * 64 + 64);
  EXPECT_EQ(blocks, 3 * per_block);
}

TEST(ParameterReport, MlpWidthAttributionTracksOverride) {
  auto c = reference();
  c.mlp_hidden = 256;
  const auto r = Decoder(c, 1).parameter_report();
  EXPECT_EQ(r.unattributed(), 0);
  EXPECT_LT(r.total, 1'073'153u);
}

TEST(ParameterReport, SmallerTokenDimShrinks) {
  auto c = reference();
  c.token_dim = 16;
  const auto r = Decoder(c, 1).parameter_report();
  EXPECT_LT(r.total, 1'073'153u / 3);
  EXPECT_FALSE(r.target.has_value());
}

TEST(ParameterReport, DeconvBaseline) {
  const auto r = Decoder(DecoderConfig::deconv_for_backbone(backbone::BackboneConfig::vit_b16()), 1).parameter_report();
  EXPECT_EQ(r.total, 131'265u);
}

TEST(Decoder, ForwardShapesAndDeterminism) {
  const auto c = fixtures::gradcheck_config();
  const Decoder a(c, 3), b(c, 3), other(c, 4);
  const auto readout = fixtures::random_readout(c, {3, 4}, 1);
  const VectorD cond = fixtures::random_matrix(c.embed_dim, 1, 2).col(0);
  const auto out = a.forward(readout, cond);
  EXPECT_EQ(out.height, 24);
  EXPECT_EQ(out.width, 32);
  EXPECT_EQ(out.values.rows(), 24);
  EXPECT_EQ(out.values, b.forward(readout, cond).values);
  EXPECT_NE(out.values, other.forward(readout, cond).values);
}

TEST(Decoder, ForwardRejectsContractViolations) {
  const auto c = fixtures::gradcheck_config();
  const Decoder d(c, 3);
  auto readout = fixtures::random_readout(c, {3, 3}, 1);
  const VectorD cond = VectorD::Zero(c.embed_dim);
  EXPECT_THROW(d.forward(readout, VectorD::Zero(c.embed_dim + 1)), InputError);
  auto wrong_layers = readout;
  wrong_layers.layers = {0, 1, 3};
  EXPECT_THROW(d.forward(wrong_layers, cond), InputError);
  auto wrong_shape = readout;
  wrong_shape.tokens[1] = MatrixD::Zero(5, c.vision_width);
  EXPECT_THROW(d.forward(wrong_shape, cond), InputError);
}

TEST(Decoder, ConditionChangesOutput) {
  const auto c = fixtures::gradcheck_config();
  const Decoder d(c, 3);
  const auto readout = fixtures::random_readout(c, {3, 3}, 1);
  EXPECT_NE(d.forward(readout, VectorD::Zero(c.embed_dim)).values,
            d.forward(readout, VectorD::Ones(c.embed_dim)).values);
}

TEST(Decoder, ReducedPrecisionStaysClose) {
  const auto c = fixtures::gradcheck_config();
  const Decoder d(c, 3);
  const auto readout = fixtures::random_readout(c, {3, 3}, 1);
  const VectorD cond = fixtures::random_matrix(c.embed_dim, 1, 2).col(0);
  Decoder::Tape tape;
  const auto low = d.forward(readout, cond, tape, true);
  const auto full = d.forward(readout, cond);
  EXPECT_LT((low.values - full.values).cwiseAbs().maxCoeff(), 1e-4);
  EXPECT_NE(low.values, full.values);
}

TEST(Decoder, GradientCheckClipSeg) {
  const auto r = fixtures::run_gradcheck(fixtures::gradcheck_config(), 48, 11);
  for (const auto& e : r.params) EXPECT_LT(e.rel_error, 1e-3) << e.name << " " << e.analytic << " vs " << e.numeric;
  for (const auto& e : r.condition) EXPECT_LT(e.rel_error, 1e-3) << e.name << " " << e.analytic << " vs " << e.numeric;
}

TEST(Decoder, GradientCheckShallowestFirstAndDeconv) {
  auto c = fixtures::gradcheck_config();
  c.skip_order = SkipOrder::ShallowestFirst;
  EXPECT_LT(fixtures::run_gradcheck(c, 24, 12).max_rel_error(), 1e-3);
  c = fixtures::gradcheck_config();
  c.variant = Variant::ClipDeconv;
  c.readout_layers = {2};
  EXPECT_LT(fixtures::run_gradcheck(c, 24, 13).max_rel_error(), 1e-3);
}

TEST(Checkpoint, RoundTripRestoresDecoder) {
  const backbone::Backbone bb(backbone::BackboneConfig::tiny());
  const Decoder d(DecoderConfig::tiny_for_backbone(bb.config()), 9);
  const auto path = temp("ckpt.pseg");
  save_checkpoint(path, d, bb, {{"steps", 12}});
  EXPECT_TRUE(std::filesystem::exists(path.string() + ".backbone.json"));
  const auto ck = load_checkpoint(path);
  EXPECT_EQ(ck.extra["steps"], 12);
  EXPECT_EQ(ck.decoder.config().hash(), d.config().hash());
  EXPECT_NO_THROW(verify_backbone(ck, bb));
  std::vector<MatrixD> a, b;
  d.params().visit([&](const std::string&, const MatrixD& m) { a.push_back(m); });
  ck.decoder.params().visit([&](const std::string&, const MatrixD& m) { b.push_back(m); });
  EXPECT_EQ(a, b);

  auto other_cfg = backbone::BackboneConfig::tiny();
  other_cfg.seed = 99;
  const backbone::Backbone other(other_cfg);
  EXPECT_THROW(verify_backbone(ck, other), ConfigError);
  std::filesystem::remove(path);
  std::filesystem::remove(path.string() + ".backbone.json");
}

TEST(Checkpoint, RejectsForeignArchive) {
  const auto path = temp("foreign.pseg");
  TensorArchive a;
  a.metadata()["kind"] = "something-else";
  a.save(path);
  EXPECT_THROW(load_checkpoint(path), FormatError);
  std::ofstream(path) << "garbage";
  EXPECT_THROW(load_checkpoint(path), FormatError);
  std::filesystem::remove(path);
}
