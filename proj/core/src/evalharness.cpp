#include "promptseg/evalharness.hpp"

#include <algorithm>
#include <mutex>
#include <sstream>

#include <spdlog/spdlog.h>

#include "parallel.hpp"
#include "promptseg/error.hpp"

namespace promptseg::eval {

using detail::parallel_for;
using detail::worker_count;

namespace {

std::string apply_template(const std::string& tmpl, const std::string& phrase) {
  const auto pos = tmpl.find("{}");
  if (pos == std::string::npos) return tmpl + phrase;
  std::string out = tmpl;
  out.replace(pos, 2, phrase);
  return out;
}

double fg_fraction(const Mask& m) {
  return m.bits.empty() ? 0.0 : static_cast<double>(m.count()) / static_cast<double>(m.bits.size());
}

void add_counts(metrics::Confusion& into, const Mask& pred, const Mask& gt) {
  for (std::size_t i = 0; i < pred.bits.size(); ++i) {
    const bool p = pred.bits[i], g = gt.bits[i];
    into.tp += p && g;
    into.fp += p && !g;
    into.fn += !p && g;
    into.tn += !p && !g;
  }
}

void add_confusion(metrics::Confusion& into, const metrics::Confusion& c) {
  into.tp += c.tp;
  into.fp += c.fp;
  into.fn += c.fn;
  into.tn += c.tn;
}

nlohmann::json optional_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json("n/a"); }

}  // namespace

nlohmann::json ReferringReport::to_json() const {
  return {{"mIoU", miou},         {"IoU_FG", iou_fg},     {"AP", ap},
          {"threshold", threshold}, {"n_images", n_images}, {"n_pixels", n_pixels}};
}

ReferringReport eval_referring(const Segmenter& model, const std::vector<datasets::SampleRecord>& records, double t,
                               const std::string& prompt_template, unsigned workers) {
  ReferringReport report;
  report.threshold = t;
  report.samples.resize(records.size());
  const unsigned w = worker_count(workers, records.size());
  std::vector<metrics::MetricAccumulator> acc(w);
  std::vector<metrics::Confusion> pooled(w);
  parallel_for(records.size(), w, [&](std::size_t i, unsigned k) {
    const auto& r = records[i];
    const Image image = r.load_image();
    const Mask gt = r.load_mask();
    const std::string phrase = apply_template(prompt_template, r.phrase);
    const MatrixD p = model.probabilities(image, conditioning::PromptSpec::from_text(phrase));
    const Mask pred = metrics::binarize(p, t);
    acc[k].accumulate(p, gt);
    add_counts(pooled[k], pred, gt);
    report.samples[i] = SampleResult{r.id, r.phrase, r.category, prompt_template, r.negative,
                                     metrics::iou_fg(pred, gt), metrics::iou_bin(pred, gt), fg_fraction(gt)};
  });
  metrics::MetricAccumulator total = acc[0];
  metrics::Confusion counts = pooled[0];
  for (unsigned k = 1; k < w; ++k) {
    total.merge(acc[k]);
    add_confusion(counts, pooled[k]);
  }
  double sum = 0.0;
  for (const auto& s : report.samples) sum += s.iou_fg;
  report.miou = records.empty() ? 0.0 : sum / static_cast<double>(records.size());
  report.iou_fg = counts.iou_fg();
  report.ap = total.average_precision();
  report.n_images = records.size();
  report.n_pixels = total.n_pixels();
  return report;
}

Eigen::MatrixXi multilabel_argmax(const std::vector<MatrixD>& maps) {
  if (maps.empty()) throw InputError("multilabel_argmax: no maps");
  const auto rows = maps[0].rows(), cols = maps[0].cols();
  for (const auto& m : maps) {
    if (m.rows() != rows || m.cols() != cols) throw InputError("multilabel_argmax: map sizes differ");
  }
  Eigen::MatrixXi labels(rows, cols);
  for (Eigen::Index y = 0; y < rows; ++y)
    for (Eigen::Index x = 0; x < cols; ++x) {
      int best = 0;
      for (std::size_t k = 1; k < maps.size(); ++k) {
        if (maps[k](y, x) > maps[best](y, x)) best = static_cast<int>(k);
      }
      labels(y, x) = best;
    }
  return labels;
}

Eigen::MatrixXi label_map(const datasets::AnnotatedImage& image, const std::vector<std::string>& class_names) {
  int w = 0, h = 0;
  if (!image.objects.empty()) {
    w = image.objects.front().second.width;
    h = image.objects.front().second.height;
  } else {
    const Image img = image.load_image();
    w = img.width;
    h = img.height;
  }
  Eigen::MatrixXi labels = Eigen::MatrixXi::Zero(h, w);
  for (const auto& [category, mask] : image.objects) {
    const auto it = std::find(class_names.begin(), class_names.end(), category);
    if (it == class_names.end()) continue;
    const int label = static_cast<int>(it - class_names.begin()) + 1;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        if (mask.at(y, x)) labels(y, x) = label;
  }
  return labels;
}

nlohmann::json ZeroShotReport::to_json() const {
  nlohmann::json per = nlohmann::json::object();
  for (const auto& [name, v] : per_class) per[name] = optional_json(v);
  return {{"mIoU_S", miou_seen},
          {"mIoU_U", miou_unseen},
          {"per_class", per},
          {"n_images", n_images},
          {"background_threshold", background_threshold}};
}

ZeroShotReport eval_zero_shot_multilabel(const Segmenter& model, const std::vector<datasets::AnnotatedImage>& images,
                                         const std::vector<std::string>& class_names,
                                         const std::set<std::string>& unseen, double background_threshold,
                                         const std::map<std::string, std::string>& prompt_names, unsigned workers) {
  if (class_names.empty()) throw InputError("zero-shot evaluation needs at least one class");
  const std::size_t C = class_names.size();
  std::vector<conditioning::ConditionalVector> conds;
  for (const auto& name : class_names) {
    const auto it = prompt_names.find(name);
    conds.push_back(model.conditioner().from_text(it == prompt_names.end() ? name : it->second));
  }

  const unsigned w = worker_count(workers, images.size());
  std::vector<std::vector<double>> sums(w, std::vector<double>(C, 0.0));
  std::vector<std::vector<std::size_t>> counts(w, std::vector<std::size_t>(C, 0));
  parallel_for(images.size(), w, [&](std::size_t i, unsigned k) {
    const Image image = images[i].load_image();
    std::vector<MatrixD> maps = model.probabilities(image, conds);
    maps.insert(maps.begin(), MatrixD::Constant(image.height, image.width, background_threshold));
    const Eigen::MatrixXi pred = multilabel_argmax(maps);
    const Eigen::MatrixXi gt = label_map(images[i], class_names);
    for (std::size_t c = 0; c < C; ++c) {
      const int label = static_cast<int>(c) + 1;
      if (!(gt.array() == label).any()) continue;
      const auto p = (pred.array() == label), g = (gt.array() == label);
      const double inter = (p && g).count(), uni = (p || g).count();
      sums[k][c] += uni == 0 ? 1.0 : inter / uni;
      counts[k][c] += 1;
    }
  });

  ZeroShotReport report;
  report.n_images = images.size();
  report.background_threshold = background_threshold;
  std::vector<double> seen_iou, unseen_iou;
  for (std::size_t c = 0; c < C; ++c) {
    double s = 0.0;
    std::size_t n = 0;
    for (unsigned k = 0; k < w; ++k) {
      s += sums[k][c];
      n += counts[k][c];
    }
    if (n == 0) {
      report.per_class[class_names[c]] = std::nullopt;
      continue;
    }
    const double v = s / static_cast<double>(n);
    report.per_class[class_names[c]] = v;
    (unseen.count(class_names[c]) ? unseen_iou : seen_iou).push_back(v);
  }
  report.miou_seen = seen_iou.empty() ? 0.0 : metrics::miou(seen_iou);
  report.miou_unseen = unseen_iou.empty() ? 0.0 : metrics::miou(unseen_iou);
  return report;
}

std::vector<Episode> episodes_from_records(const std::vector<datasets::SampleRecord>& records) {
  std::vector<Episode> out;
  for (const auto& r : records) {
    if (!r.support || r.negative) continue;
    out.push_back(Episode{r.id, r.category.empty() ? r.phrase : r.category, r.load_support_image(),
                          r.load_support_mask(), r.load_image(), r.load_mask()});
  }
  return out;
}

nlohmann::json OneShotReport::to_json() const {
  return {{"mIoU", miou},           {"IoU_BIN", iou_bin},       {"AP", ap},
          {"threshold", threshold}, {"n_episodes", n_episodes}, {"skipped", skipped}};
}

OneShotReport eval_one_shot(const Segmenter& model, const std::vector<Episode>& episodes, const std::string& recipe,
                            double t, bool use_text, unsigned workers) {
  OneShotReport report;
  report.threshold = t;
  const unsigned w = worker_count(workers, episodes.size());
  std::vector<metrics::MetricAccumulator> acc(w);
  std::vector<metrics::Confusion> pooled(w);
  std::vector<std::map<std::string, metrics::Confusion>> per_class(w);
  std::vector<std::optional<SampleResult>> results(episodes.size());
  parallel_for(episodes.size(), w, [&](std::size_t i, unsigned k) {
    const Episode& e = episodes[i];
    conditioning::ConditionalVector c;
    try {
      c = use_text ? model.conditioner().from_text(e.category)
                   : model.conditioner().from_visual(e.support_image, e.support_mask, recipe);
    } catch (const DegenerateMaskError& err) {
      spdlog::warn("episode {} skipped: {}", e.id, err.what());
      return;
    }
    const MatrixD p = model.probabilities(e.query_image, c);
    const Mask pred = metrics::binarize(p, t);
    acc[k].accumulate(p, e.query_mask);
    add_counts(pooled[k], pred, e.query_mask);
    add_counts(per_class[k][e.category], pred, e.query_mask);
    results[i] = SampleResult{e.id, e.category, e.category, use_text ? "text" : recipe, false,
                              metrics::iou_fg(pred, e.query_mask), metrics::iou_bin(pred, e.query_mask),
                              fg_fraction(e.query_mask)};
  });
  metrics::MetricAccumulator total = acc.empty() ? metrics::MetricAccumulator() : acc[0];
  metrics::Confusion counts = pooled.empty() ? metrics::Confusion{} : pooled[0];
  std::map<std::string, metrics::Confusion> classes = per_class.empty() ? std::map<std::string, metrics::Confusion>{}
                                                                         : per_class[0];
  for (unsigned k = 1; k < w; ++k) {
    total.merge(acc[k]);
    add_confusion(counts, pooled[k]);
    for (const auto& [name, c] : per_class[k]) add_confusion(classes[name], c);
  }
  for (auto& r : results) {
    if (r) report.samples.push_back(std::move(*r));
    else ++report.skipped;
  }
  std::vector<double> class_iou;
  for (const auto& [name, c] : classes) class_iou.push_back(c.iou_fg());
  report.miou = class_iou.empty() ? 0.0 : metrics::miou(class_iou);
  report.iou_bin = counts.iou_bin();
  report.ap = total.average_precision();
  report.n_episodes = report.samples.size();
  return report;
}

std::vector<GeneralizedRow> eval_generalized(const Segmenter& model,
                                             const std::map<std::string, std::vector<datasets::SampleRecord>>& subsets,
                                             const std::map<std::string, std::string>& group_of, double t,
                                             unsigned workers) {
  std::vector<GeneralizedRow> rows;
  for (const auto& [prompt, records] : subsets) {
    GeneralizedRow row;
    row.prompt = prompt;
    if (auto it = group_of.find(prompt); it != group_of.end()) row.group = it->second;
    row.n_images = records.size();
    if (!records.empty()) {
      const auto r = eval_referring(model, records, t, "{}", workers);
      row.miou = r.miou;
      row.ap = r.ap;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

nlohmann::json to_json(const std::vector<GeneralizedRow>& rows) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& r : rows) {
    a.push_back({{"prompt", r.prompt},
                 {"group", r.group},
                 {"n_images", r.n_images},
                 {"mIoU", optional_json(r.miou)},
                 {"AP", optional_json(r.ap)}});
  }
  return a;
}

BreakdownKey breakdown_key_from_string(const std::string& key) {
  if (key == "size" || key == "object-size") return BreakdownKey::ObjectSize;
  if (key == "template" || key == "prompt-template") return BreakdownKey::PromptTemplate;
  if (key == "class") return BreakdownKey::Class;
  throw InputError("unknown breakdown key '" + key + "' (expected size, template or class)");
}

std::string size_bucket(double f) {
  if (f < 0.01) return "tiny";
  if (f < 0.05) return "small";
  if (f < 0.20) return "medium";
  return "large";
}

std::vector<Group> breakdown(const std::vector<SampleResult>& results, BreakdownKey key) {
  std::map<std::string, std::pair<std::size_t, double>> acc;
  for (const auto& r : results) {
    std::string k;
    switch (key) {
      case BreakdownKey::ObjectSize: k = size_bucket(r.fg_fraction); break;
      case BreakdownKey::PromptTemplate: k = r.prompt_template; break;
      case BreakdownKey::Class: k = r.category.empty() ? r.phrase : r.category; break;
    }
    acc[k].first += 1;
    acc[k].second += r.iou_fg;
  }
  std::vector<Group> groups;
  for (const auto& [k, v] : acc) groups.push_back({k, v.first, v.second / static_cast<double>(v.first)});
  return groups;
}

AblationDelta parse_ablation(const std::string& text) {
  AblationDelta d;
  d.name = text;
  if (text.empty() || text == "base") return d;
  if (text == "only layer 3") {
    d.overrides["readout_layers"] = "3";
    return d;
  }
  if (text == "no visual") {
    d.overrides["use_visual"] = "false";
    return d;
  }
  if (text == "highlight mask") {
    d.overrides["recipe"] = "highlight";
    return d;
  }
  if (text == "no CLIP pre-training") {
    d.overrides["backbone_variant"] = backbone::to_string(backbone::Variant::ImagenetVitStandIn);
    return d;
  }
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ';')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw ConfigError("ablation '" + text + "': expected field=value");
    std::string field = item.substr(0, eq), value = item.substr(eq + 1);
    if (field == "D") field = "token_dim";
    d.overrides[field] = value;
  }
  return d;
}

namespace {

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stoi(item));
  return out;
}

bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ConfigError("expected a boolean, got '" + s + "'");
}

}  // namespace

void apply_overrides(const AblationDelta& delta, AblationBase& base, std::string& recipe) {
  for (const auto& [field, value] : delta.overrides) {
    try {
      if (field == "token_dim") base.decoder.token_dim = std::stoi(value);
      else if (field == "heads") base.decoder.heads = std::stoi(value);
      else if (field == "mlp_hidden") base.decoder.mlp_hidden = std::stoi(value);
      else if (field == "readout_layers") {
        base.decoder.readout_layers = parse_int_list(value);
        base.decoder.blocks.reset();
      } else if (field == "skip_order") {
        if (value != "shallowest-first" && value != "deepest-first") {
          throw ConfigError("ablation '" + delta.name + "': skip_order must be deepest-first or shallowest-first");
        }
        base.decoder.skip_order =
            value == "shallowest-first" ? decoder::SkipOrder::ShallowestFirst : decoder::SkipOrder::DeepestFirst;
      } else if (field == "use_visual") base.train.use_visual = parse_bool(value);
      else if (field == "recipe") recipe = value;
      else if (field == "backbone_variant") base.backbone.variant = backbone::variant_from_string(value);
      else if (field == "iterations") base.train.iterations = std::stoi(value);
      else if (field == "lr0") base.train.lr0 = std::stod(value);
      else if (field == "batch_size") base.train.batch_size = std::stoi(value);
      else throw ConfigError("ablation '" + delta.name + "': unknown field '" + field + "'");
    } catch (const std::invalid_argument&) {
      throw ConfigError("ablation '" + delta.name + "': bad value '" + value + "' for " + field);
    }
  }
  base.train.recipe = recipe;
  base.decoder.validate();
  base.train.validate();
}

std::vector<AblationRow> run_ablation(const AblationBase& base, const std::vector<AblationDelta>& deltas) {
  // validate every delta before spending time on training
  for (const auto& d : deltas) {
    AblationBase copy = base;
    std::string recipe = base.train.recipe;
    apply_overrides(d, copy, recipe);
  }
  std::vector<AblationRow> rows;
  for (const auto& d : deltas) {
    AblationBase variant = base;
    std::string recipe = base.train.recipe;
    apply_overrides(d, variant, recipe);
    spdlog::info("ablation '{}': training", d.name);
    backbone::Backbone bb(variant.backbone);
    decoder::Decoder dec(variant.decoder, variant.seed);
    training::Trainer trainer(bb, dec, variant.train);
    trainer.train(variant.train_records);
    Segmenter seg(bb, dec);
    AblationRow row;
    row.name = d.name.empty() ? "base" : d.name;
    row.parameters = dec.parameter_report().total;
    const auto text = eval_referring(seg, variant.eval_records, variant.threshold, "{}", variant.train.workers);
    row.text_miou = text.miou;
    row.text_ap = text.ap;
    if (!variant.episodes.empty()) {
      const auto vis = eval_one_shot(seg, variant.episodes, recipe, variant.threshold, false, variant.train.workers);
      row.visual_miou = vis.miou;
      row.visual_ap = vis.ap;
    }
    rows.push_back(row);
  }
  return rows;
}

nlohmann::json to_json(const std::vector<AblationRow>& rows) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& r : rows) {
    a.push_back({{"name", r.name},
                 {"parameters", r.parameters},
                 {"text", {{"mIoU", r.text_miou}, {"AP", r.text_ap}}},
                 {"visual", {{"mIoU", r.visual_miou}, {"AP", r.visual_ap}}}});
  }
  return a;
}

}  // namespace promptseg::eval
