#include <random>

#include <gtest/gtest.h>

#include "promptseg/error.hpp"
#include "promptseg/evalharness.hpp"
#include "support.hpp"

using namespace promptseg;
using namespace promptseg::eval;

namespace {

const backbone::Backbone& tiny() {
  static const backbone::Backbone b(backbone::BackboneConfig::tiny());
  return b;
}

const decoder::Decoder& toy_decoder() {
  static const decoder::Decoder d(decoder::DecoderConfig::tiny_for_backbone(tiny().config()), 9);
  return d;
}

MatrixD one_hot(const Eigen::MatrixXi& labels, int k) {
  return (labels.array() == k).cast<double>().matrix();
}

// 3x3 box average then threshold: a blur-corrupted prediction.
Mask blurred(const Mask& m) {
  Mask out(m.width, m.height);
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) {
      int s = 0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int yy = y + dy, xx = x + dx;
          if (yy >= 0 && xx >= 0 && yy < m.height && xx < m.width) s += m.at(yy, xx);
        }
      out.at(y, x) = s >= 2 ? 1 : 0;
    }
  return out;
}

}  // namespace

TEST(Argmax, OneHotMapsRecoverLabelsExactly) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> label(0, 3);
  Eigen::MatrixXi gt(17, 13);
  for (Eigen::Index i = 0; i < gt.size(); ++i) gt(i) = label(rng);
  std::vector<MatrixD> maps{MatrixD::Constant(17, 13, 0.5)};
  for (int k = 1; k <= 3; ++k) maps.push_back(one_hot(gt, k));
  EXPECT_EQ(multilabel_argmax(maps), gt);
  for (auto& m : maps) m *= 3.7;
  EXPECT_EQ(multilabel_argmax(maps), gt);
}

TEST(Argmax, TiesGoToLowestIndexDeterministically) {
  const MatrixD same = MatrixD::Constant(4, 4, 0.6);
  const auto a = multilabel_argmax({MatrixD::Constant(4, 4, 0.5), same, same});
  EXPECT_TRUE((a.array() == 1).all());
  EXPECT_EQ(a, multilabel_argmax({MatrixD::Constant(4, 4, 0.5), same, same}));
  EXPECT_THROW(multilabel_argmax({}), InputError);
  EXPECT_THROW(multilabel_argmax({MatrixD::Zero(2, 2), MatrixD::Zero(3, 2)}), InputError);
}

TEST(Argmax, ScalingByPositiveConstantKeepsLabels) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<MatrixD> maps(5, MatrixD(9, 9));
  for (auto& m : maps)
    for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = u(rng);
  const auto before = multilabel_argmax(maps);
  for (double c : {0.01, 2.5, 1e6}) {
    auto scaled = maps;
    for (auto& m : scaled) m *= c;
    EXPECT_EQ(multilabel_argmax(scaled), before);
  }
}

TEST(LabelMap, LaterObjectsOverwrite) {
  datasets::AnnotatedImage img;
  img.image = std::make_shared<const Image>(6, 6, 0.0f);
  img.objects = {{"a", fixtures::rect_mask(6, 6, 0, 0, 3, 3)}, {"b", fixtures::rect_mask(6, 6, 2, 2, 5, 5)},
                 {"zzz", fixtures::rect_mask(6, 6, 5, 0, 5, 0)}};
  const auto m = label_map(img, {"a", "b"});
  EXPECT_EQ(m(0, 0), 1);
  EXPECT_EQ(m(3, 3), 2);
  EXPECT_EQ(m(0, 5), 0);
}

TEST(ZeroShot, ReportsSeenUnseenAndNotApplicable) {
  const Segmenter model(tiny(), toy_decoder());
  const auto images = datasets::synth_scenes(3, 4);
  std::set<std::string> present;
  for (const auto& im : images)
    for (const auto& [c, m] : im.objects) present.insert(c);
  std::vector<std::string> classes(present.begin(), present.end());
  classes.push_back("absent thing");
  const std::set<std::string> unseen{classes.front()};
  const auto r = eval_zero_shot_multilabel(model, images, classes, unseen, 0.5, {}, 2);
  EXPECT_FALSE(r.per_class.at("absent thing").has_value());
  EXPECT_TRUE(r.per_class.at(classes.front()).has_value());
  EXPECT_DOUBLE_EQ(r.miou_unseen, *r.per_class.at(classes.front()));
  EXPECT_GE(r.miou_seen, 0.0);
  EXPECT_LE(r.miou_seen, 1.0);
  const auto again = eval_zero_shot_multilabel(model, images, classes, unseen, 0.5, {}, 1);
  EXPECT_EQ(again.per_class, r.per_class);
  const auto j = r.to_json();
  EXPECT_TRUE(j.contains("mIoU_S"));
  EXPECT_TRUE(j.contains("mIoU_U"));
  EXPECT_THROW(eval_zero_shot_multilabel(model, images, {}, {}), InputError);
}

TEST(Referring, ApIsThresholdFreeAndModelUntouched) {
  const Segmenter model(tiny(), toy_decoder());
  const auto records = datasets::synth_dataset(6, 5);
  const auto head = toy_decoder().params().head_weight;
  const auto a = eval_referring(model, records, 0.3, "{}", 2);
  const auto b = eval_referring(model, records, 0.7, "{}", 1);
  EXPECT_DOUBLE_EQ(a.ap, b.ap);
  EXPECT_EQ(a.n_images, 5u);
  EXPECT_EQ(a.samples.size(), 5u);
  EXPECT_EQ(toy_decoder().params().head_weight, head);
  for (double v : {a.miou, a.iou_fg, a.ap}) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  const auto templated = eval_referring(model, records, 0.3, "a photo of a {}.");
  EXPECT_EQ(templated.samples[0].prompt_template, "a photo of a {}.");
}

TEST(OneShot, SkipsDegenerateSupports) {
  const Segmenter model(tiny(), toy_decoder());
  auto records = datasets::synth_dataset(8, 6);
  std::mt19937_64 rng(1);
  auto episodes = episodes_from_records(datasets::build_phrasecut_plus(records, 0.0, rng));
  ASSERT_FALSE(episodes.empty());
  const std::size_t usable = episodes.size();
  episodes.push_back(episodes.front());
  episodes.back().support_mask = Mask(episodes.back().support_mask.width, episodes.back().support_mask.height);
  const auto r = eval_one_shot(model, episodes, prompts::RecipeRegistry::kBestRecipe, 0.3);
  EXPECT_EQ(r.skipped, 1u);
  EXPECT_EQ(r.n_episodes, usable);
  const auto text = eval_one_shot(model, episodes, prompts::RecipeRegistry::kBestRecipe, 0.3, true);
  EXPECT_EQ(text.skipped, 0u);
}

TEST(Generalized, EmptySubsetIsNotApplicable) {
  const Segmenter model(tiny(), toy_decoder());
  std::map<std::string, std::vector<datasets::SampleRecord>> subsets{{"something round", datasets::synth_dataset(2, 2)},
                                                                     {"something empty", {}}};
  const auto rows = eval_generalized(model, subsets, {{"something round", "shape"}}, 0.5);
  ASSERT_EQ(rows.size(), 2u);
  for (const auto& row : rows) {
    if (row.prompt == "something empty") {
      EXPECT_FALSE(row.miou.has_value());
      EXPECT_EQ(row.n_images, 0u);
    } else {
      EXPECT_TRUE(row.ap.has_value());
      EXPECT_EQ(row.group, "shape");
    }
  }
  EXPECT_EQ(to_json(rows).size(), 2u);
}

TEST(Breakdown, GroupsRecombineToGlobalMean) {
  std::vector<SampleResult> results;
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 1);
  double total = 0;
  for (int i = 0; i < 40; ++i) {
    SampleResult s;
    s.iou_fg = u(rng);
    s.fg_fraction = 0.3 * u(rng);
    s.prompt_template = i % 3 ? "{}" : "a photo of a {}.";
    s.category = i % 2 ? "red circle" : "blue square";
    total += s.iou_fg;
    results.push_back(s);
  }
  for (auto key : {BreakdownKey::ObjectSize, BreakdownKey::PromptTemplate, BreakdownKey::Class}) {
    double weighted = 0;
    std::size_t n = 0;
    for (const auto& g : breakdown(results, key)) {
      weighted += g.mean_iou_fg * static_cast<double>(g.count);
      n += g.count;
    }
    EXPECT_EQ(n, results.size());
    EXPECT_NEAR(weighted / n, total / results.size(), 1e-12);
  }
  for (auto& r : results) r.category = "one";
  const auto single = breakdown(results, BreakdownKey::Class);
  ASSERT_EQ(single.size(), 1u);
  EXPECT_NEAR(single[0].mean_iou_fg, total / results.size(), 1e-12);
  EXPECT_THROW(breakdown_key_from_string("colour"), InputError);
}

TEST(Breakdown, SizeBucketsAndBlurTrend) {
  EXPECT_EQ(size_bucket(0.005), "tiny");
  EXPECT_EQ(size_bucket(0.03), "small");
  EXPECT_EQ(size_bucket(0.1), "medium");
  EXPECT_EQ(size_bucket(0.5), "large");
  std::vector<SampleResult> results;
  for (int side : {3, 5, 8, 12, 20, 30, 45, 60}) {
    const Mask gt = fixtures::rect_mask(64, 64, 1, 1, side, side);
    SampleResult s;
    s.iou_fg = metrics::iou_fg(blurred(gt), gt);
    s.fg_fraction = static_cast<double>(gt.count()) / (64.0 * 64.0);
    results.push_back(s);
  }
  std::map<std::string, double> by;
  for (const auto& g : breakdown(results, BreakdownKey::ObjectSize)) by[g.key] = g.mean_iou_fg;
  EXPECT_GE(by.at("large"), by.at("medium"));
  EXPECT_GE(by.at("medium"), by.at("small"));
  EXPECT_GE(by.at("small"), by.at("tiny"));
}

TEST(Ablation, NamedRowsAndOverrides) {
  AblationBase base;
  base.backbone = tiny().config();
  base.decoder = decoder::DecoderConfig::tiny_for_backbone(base.backbone);
  const auto full = decoder::Decoder(base.decoder, 1).params().size();

  auto b = base;
  std::string recipe = b.train.recipe;
  apply_overrides(parse_ablation("D=16"), b, recipe);
  EXPECT_EQ(b.decoder.token_dim, 16);
  EXPECT_LT(decoder::Decoder(b.decoder, 1).params().size(), full);

  b = base;
  apply_overrides(parse_ablation("only layer 3"), b, recipe);
  EXPECT_EQ(b.decoder.readout_layers, std::vector<int>{3});
  EXPECT_EQ(b.decoder.num_blocks(), 1);

  b = base;
  apply_overrides(parse_ablation("highlight mask"), b, recipe);
  EXPECT_EQ(recipe, "highlight");
  EXPECT_EQ(b.train.recipe, "highlight");

  b = base;
  apply_overrides(parse_ablation("no visual"), b, recipe);
  EXPECT_FALSE(b.train.use_visual);
  apply_overrides(parse_ablation("no CLIP pre-training"), b, recipe);
  EXPECT_EQ(b.backbone.variant, backbone::Variant::ImagenetVitStandIn);

  EXPECT_THROW(parse_ablation("D"), ConfigError);
  EXPECT_THROW(apply_overrides(parse_ablation("colour=red"), b, recipe), ConfigError);
  EXPECT_THROW(apply_overrides(parse_ablation("heads=many"), b, recipe), ConfigError);
  EXPECT_THROW(apply_overrides(parse_ablation("skip_order=sideways"), b, recipe), ConfigError);
}
