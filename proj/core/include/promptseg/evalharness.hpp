#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "promptseg/datasets.hpp"
#include "promptseg/metrics.hpp"
#include "promptseg/pipeline.hpp"
#include "promptseg/training.hpp"

namespace promptseg::eval {

struct SampleResult {
  std::string id;
  std::string phrase;
  std::string category;
  std::string prompt_template;
  bool negative = false;
  double iou_fg = 0.0;
  double iou_bin = 0.0;
  double fg_fraction = 0.0;  // ground-truth foreground share of the image
};

struct ReferringReport {
  double miou = 0.0;    // mean per-sample foreground IoU
  double iou_fg = 0.0;  // pooled over every pixel
  double ap = 0.0;
  double threshold = 0.5;
  std::size_t n_images = 0;
  std::uint64_t n_pixels = 0;
  std::vector<SampleResult> samples;

  nlohmann::json to_json() const;
};

// `prompt_template` wraps each phrase; "{}" marks where it goes.
ReferringReport eval_referring(const Segmenter& model, const std::vector<datasets::SampleRecord>& records, double t,
                               const std::string& prompt_template = "{}", unsigned workers = 1);

// Per-pixel index of the largest map; ties go to the lowest index.
Eigen::MatrixXi multilabel_argmax(const std::vector<MatrixD>& maps);

struct ZeroShotReport {
  double miou_seen = 0.0;
  double miou_unseen = 0.0;
  std::map<std::string, std::optional<double>> per_class;  // n/a when no image contains the class
  std::size_t n_images = 0;
  double background_threshold = 0.5;

  nlohmann::json to_json() const;
};

// One binary forward per class name. A constant map at the background
// threshold takes index 0, class k index k + 1. Per-class IoU is averaged
// over the images containing the class. Throws InputError for an empty class
// list.
ZeroShotReport eval_zero_shot_multilabel(const Segmenter& model, const std::vector<datasets::AnnotatedImage>& images,
                                         const std::vector<std::string>& class_names,
                                         const std::set<std::string>& unseen, double background_threshold = 0.5,
                                         const std::map<std::string, std::string>& prompt_names = {},
                                         unsigned workers = 1);

// Ground-truth label map over `class_names` (0 = background; later objects
// overwrite earlier ones).
Eigen::MatrixXi label_map(const datasets::AnnotatedImage& image, const std::vector<std::string>& class_names);

struct Episode {
  std::string id;
  std::string category;
  Image support_image;
  Mask support_mask;
  Image query_image;
  Mask query_mask;
};

// Query = each record, support = its PC+ support.
std::vector<Episode> episodes_from_records(const std::vector<datasets::SampleRecord>& records);

struct OneShotReport {
  double miou = 0.0;    // class mean of pooled foreground IoU
  double iou_bin = 0.0;  // pooled foreground/background IoU mean
  double ap = 0.0;
  double threshold = 0.5;
  std::size_t n_episodes = 0;
  std::size_t skipped = 0;
  std::vector<SampleResult> samples;

  nlohmann::json to_json() const;
};

// With use_text the category name replaces the support (text variant of
// the same protocol). Episodes with an empty support mask are skipped and
// counted.
OneShotReport eval_one_shot(const Segmenter& model, const std::vector<Episode>& episodes, const std::string& recipe,
                            double t, bool use_text = false, unsigned workers = 1);

struct GeneralizedRow {
  std::string prompt;
  std::string group;
  std::size_t n_images = 0;
  std::optional<double> miou;
  std::optional<double> ap;
};

std::vector<GeneralizedRow> eval_generalized(const Segmenter& model,
                                             const std::map<std::string, std::vector<datasets::SampleRecord>>& subsets,
                                             const std::map<std::string, std::string>& group_of, double t,
                                             unsigned workers = 1);
nlohmann::json to_json(const std::vector<GeneralizedRow>& rows);

enum class BreakdownKey { ObjectSize, PromptTemplate, Class };
BreakdownKey breakdown_key_from_string(const std::string& key);  // InputError when unknown

struct Group {
  std::string key;
  std::size_t count = 0;
  double mean_iou_fg = 0.0;
};

// Size buckets by ground-truth foreground fraction: tiny < 1%, small < 5%,
// medium < 20%, large otherwise.
std::vector<Group> breakdown(const std::vector<SampleResult>& results, BreakdownKey key);
std::string size_bucket(double fg_fraction);

// Everything an ablation run needs besides the overrides.
struct AblationBase {
  backbone::BackboneConfig backbone;
  decoder::DecoderConfig decoder;
  training::TrainConfig train;
  std::vector<datasets::SampleRecord> train_records;
  std::vector<datasets::SampleRecord> eval_records;  // text column
  std::vector<Episode> episodes;                     // visual column
  double threshold = 0.5;
  std::uint64_t seed = 1;
};

struct AblationRow {
  std::string name;
  std::size_t parameters = 0;
  double text_miou = 0.0;
  double text_ap = 0.0;
  double visual_miou = 0.0;
  double visual_ap = 0.0;
};

struct AblationDelta {
  std::string name;
  std::map<std::string, std::string> overrides;  // field -> value
};

// Named rows ("D=16", "only layer 3", "no visual", "highlight mask",
// "no CLIP pre-training") or generic "field=value[;field=value]".
AblationDelta parse_ablation(const std::string& text);

// Applies overrides; throws ConfigError for unknown fields.
void apply_overrides(const AblationDelta& delta, AblationBase& base, std::string& recipe);

std::vector<AblationRow> run_ablation(const AblationBase& base, const std::vector<AblationDelta>& deltas);
nlohmann::json to_json(const std::vector<AblationRow>& rows);

}  // namespace promptseg::eval
