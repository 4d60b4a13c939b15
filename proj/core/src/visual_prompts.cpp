#include "promptseg/visual_prompts.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <mutex>
#include <numeric>
#include <ostream>
#include <sstream>
#include <thread>

#include <opencv2/imgproc.hpp>
#include <spdlog/spdlog.h>

#include "image_cv.hpp"
#include "promptseg/error.hpp"

namespace promptseg::prompts {

using backbone::AttentionMaskMode;

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  int depth = 0;
  for (std::size_t i = 0; i <= s.size(); ++i) {
    if (i < s.size() && s[i] == '(') ++depth;
    if (i < s.size() && s[i] == ')') --depth;
    if (i == s.size() || (s[i] == sep && depth == 0)) {
      out.push_back(trim(s.substr(start, i - start)));
      start = i + 1;
    }
  }
  return out;
}

double parse_number(const std::string& text, const std::string& step) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw InputError("recipe step '" + step + "': '" + text + "' is not a number");
  }
}

std::string format_number(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

bool is_background(const Mask& m, std::size_t i) { return m.bits[i] == 0; }

}  // namespace

std::string CompositionStep::to_string() const {
  switch (kind) {
    case Kind::None:
      return "none";
    case Kind::BgIntensity:
      return "bg_intensity(" + format_number(alpha) + ")";
    case Kind::BgBlur:
      return sigma ? "bg_blur(" + format_number(*sigma) + ")" : "bg_blur";
    case Kind::Crop:
      return context == CropContext::Tight ? "crop" : "crop(large)";
    case Kind::Outline:
      return width ? "outline(" + std::to_string(*width) + ")" : "outline";
    case Kind::GrayscaleDye:
      return "grayscale_dye";
    case Kind::Highlight:
      return "highlight(" + format_number(alpha) + ")";
  }
  return "?";
}

bool CompositionRecipe::has_crop() const {
  return std::any_of(steps.begin(), steps.end(), [](const auto& s) { return s.kind == CompositionStep::Kind::Crop; });
}

CompositionRecipe parse_recipe(std::string_view text) {
  CompositionRecipe recipe;
  recipe.id = trim(text);
  if (recipe.id.empty()) throw InputError("empty recipe");
  for (const auto& token : split(recipe.id, '+')) {
    std::string name = token;
    std::vector<std::string> args;
    if (const auto open = token.find('('); open != std::string::npos) {
      if (token.back() != ')') throw InputError("recipe step '" + token + "' has unbalanced parentheses");
      name = trim(token.substr(0, open));
      args = split(std::string_view(token).substr(open + 1, token.size() - open - 2), ',');
    }
    auto expect_args = [&](std::size_t lo, std::size_t hi) {
      if (args.size() < lo || args.size() > hi) {
        throw InputError("recipe step '" + token + "' takes " + std::to_string(lo) + ".." + std::to_string(hi) +
                         " arguments");
      }
    };
    CompositionStep step;
    if (name == "none") {
      expect_args(0, 0);
    } else if (name == "bg_intensity") {
      expect_args(1, 1);
      step.kind = CompositionStep::Kind::BgIntensity;
      step.alpha = parse_number(args[0], token);
      if (step.alpha < 0.0 || step.alpha > 1.0) throw InputError("bg_intensity factor must lie in [0, 1]");
    } else if (name == "bg_blur") {
      expect_args(0, 1);
      step.kind = CompositionStep::Kind::BgBlur;
      if (!args.empty()) {
        step.sigma = parse_number(args[0], token);
        if (*step.sigma <= 0.0) throw InputError("bg_blur sigma must be positive");
      }
    } else if (name == "crop") {
      expect_args(0, 1);
      step.kind = CompositionStep::Kind::Crop;
      if (!args.empty()) {
        if (args[0] == "tight") {
          step.context = CropContext::Tight;
        } else if (args[0] == "large") {
          step.context = CropContext::Large;
        } else {
          throw InputError("crop context must be 'tight' or 'large'");
        }
      }
    } else if (name == "outline") {
      expect_args(0, 1);
      step.kind = CompositionStep::Kind::Outline;
      if (!args.empty()) step.width = static_cast<int>(parse_number(args[0], token));
    } else if (name == "grayscale_dye") {
      expect_args(0, 0);
      step.kind = CompositionStep::Kind::GrayscaleDye;
    } else if (name == "highlight") {
      expect_args(0, 1);
      step.kind = CompositionStep::Kind::Highlight;
      step.alpha = args.empty() ? 0.5 : parse_number(args[0], token);
    } else if (name == "clip_mask") {
      expect_args(1, 2);
      if (args[0] == "cls_layer") {
        recipe.attention = AttentionMaskMode::ClsOnlyLayer;
        if (args.size() == 2) recipe.attention_layer = static_cast<int>(parse_number(args[1], token));
      } else if (args[0] == "cls_all") {
        recipe.attention = AttentionMaskMode::ClsOnlyAllLayers;
      } else if (args[0] == "all_all") {
        recipe.attention = AttentionMaskMode::AllTokensAllLayers;
      } else {
        throw InputError("clip_mask mode must be cls_layer, cls_all or all_all");
      }
      continue;
    } else {
      throw InputError("unknown recipe step '" + name + "'");
    }
    recipe.steps.push_back(step);
  }
  return recipe;
}

RecipeRegistry RecipeRegistry::standard() {
  RecipeRegistry r;
  r.add("none", "original image");
  r.add("clip_mask(cls_layer,11)", "CLIP masking CLS in layer 11");
  r.add("clip_mask(cls_all)", "CLIP masking CLS in all layers");
  r.add("clip_mask(all_all)", "CLIP masking all in all layers");
  r.add("grayscale_dye", "dye object red in grays. image");
  r.add("outline", "add red object outline");
  r.add("bg_intensity(0.5)", "BG intensity 50%");
  r.add("bg_intensity(0.1)", "BG intensity 10%");
  r.add("bg_intensity(0)", "BG intensity 0%");
  r.add("bg_blur", "BG blur");
  r.add("bg_blur+bg_intensity(0.1)", "BG blur + intensity 10%");
  r.add("crop(large)", "crop large context");
  r.add("crop", "crop");
  r.add("crop+bg_blur", "crop & BG blur");
  r.add("crop+bg_intensity(0.1)", "crop & BG intensity 10%");
  r.add(kBestRecipe, "crop & BG intensity 10% + BG blur");
  r.add("highlight", "highlight mask");
  return r;
}

void RecipeRegistry::add(std::string id, std::string label) {
  for (const auto& e : entries_) {
    if (e.recipe.id == id) throw ConfigError("recipe id '" + id + "' registered twice");
  }
  entries_.push_back(Entry{parse_recipe(id), std::move(label)});
}

CompositionRecipe RecipeRegistry::find(std::string_view id) const {
  for (const auto& e : entries_) {
    if (e.recipe.id == id) return e.recipe;
  }
  return parse_recipe(id);
}

std::vector<std::string> RecipeRegistry::ids() const {
  std::vector<std::string> out;
  for (const auto& e : entries_) out.push_back(e.recipe.id);
  return out;
}

std::string RecipeRegistry::label(std::string_view id) const {
  for (const auto& e : entries_) {
    if (e.recipe.id == id) return e.label;
  }
  return std::string(id);
}

Box crop_box(const Mask& mask, CropContext context, double margin) {
  Box box = bounding_box(mask);
  if (context == CropContext::Large) {
    const int dx = static_cast<int>(std::lround(margin * box.width()));
    const int dy = static_cast<int>(std::lround(margin * box.height()));
    box.x0 = std::max(0, box.x0 - dx);
    box.y0 = std::max(0, box.y0 - dy);
    box.x1 = std::min(mask.width - 1, box.x1 + dx);
    box.y1 = std::min(mask.height - 1, box.y1 + dy);
  }
  return box;
}

Image compose_prompt(const Image& image, const Mask& mask, const CompositionRecipe& recipe,
                     const CompositionOptions& options) {
  if (mask.width != image.width || mask.height != image.height) {
    throw InputError("support mask and image differ in size");
  }
  if (!mask.is_binary()) throw InputError("support mask is not binary");
  if (recipe.has_crop() && !mask.any()) throw DegenerateMaskError("crop requested on an empty mask");

  Image img = image;
  Mask m = mask;
  using Kind = CompositionStep::Kind;
  for (const auto& step : recipe.steps) {
    switch (step.kind) {
      case Kind::None:
        break;
      case Kind::BgIntensity: {
        const auto a = static_cast<float>(step.alpha);
        for (std::size_t i = 0; i < m.bits.size(); ++i) {
          if (!is_background(m, i)) continue;
          for (int c = 0; c < 3; ++c) img.pixels[i * 3 + c] *= a;
        }
        break;
      }
      case Kind::BgBlur: {
        const double base = step.sigma.value_or(options.blur_sigma);
        const double sigma = base * std::max(img.width, img.height) / options.output_size;
        cv::Mat blurred;
        cv::GaussianBlur(detail::to_mat(img), blurred, cv::Size(0, 0), sigma, sigma, cv::BORDER_REFLECT);
        const float* src = blurred.ptr<float>();
        for (std::size_t i = 0; i < m.bits.size(); ++i) {
          if (!is_background(m, i)) continue;
          for (int c = 0; c < 3; ++c) img.pixels[i * 3 + c] = src[i * 3 + c];
        }
        break;
      }
      case Kind::Crop: {
        const Box box = crop_box(m, step.context, options.large_margin);
        img = resize_bilinear(crop(img, box), options.output_size, options.output_size);
        m = resize_nearest(crop(m, box), options.output_size, options.output_size);
        break;
      }
      case Kind::Outline: {
        const int w = step.width.value_or(options.outline_width);
        cv::Mat dilated;
        const cv::Mat kernel = cv::getStructuringElement(cv::MORPH_ELLIPSE, cv::Size(2 * w + 1, 2 * w + 1));
        cv::dilate(detail::to_mat(m), dilated, kernel);
        const auto* d = dilated.ptr<std::uint8_t>();
        for (std::size_t i = 0; i < m.bits.size(); ++i) {
          if (d[i] && !m.bits[i]) {
            img.pixels[i * 3 + 0] = step.color.r;
            img.pixels[i * 3 + 1] = step.color.g;
            img.pixels[i * 3 + 2] = step.color.b;
          }
        }
        break;
      }
      case Kind::GrayscaleDye: {
        const float tint[3] = {step.color.r, step.color.g, step.color.b};
        for (std::size_t i = 0; i < m.bits.size(); ++i) {
          float* p = &img.pixels[i * 3];
          const float gray = 0.299f * p[0] + 0.587f * p[1] + 0.114f * p[2];
          for (int c = 0; c < 3; ++c) p[c] = m.bits[i] ? 0.5f * gray + 0.5f * tint[c] : gray;
        }
        break;
      }
      case Kind::Highlight: {
        const auto a = static_cast<float>(step.alpha);
        const float tint[3] = {step.color.r, step.color.g, step.color.b};
        for (std::size_t i = 0; i < m.bits.size(); ++i) {
          if (!m.bits[i]) continue;
          for (int c = 0; c < 3; ++c) img.pixels[i * 3 + c] = (1.f - a) * img.pixels[i * 3 + c] + a * tint[c];
        }
        break;
      }
    }
  }
  return img;
}

VectorD encode_visual_prompt(const backbone::Backbone& model, const Image& image, const Mask& mask,
                             const CompositionRecipe& recipe, const CompositionOptions& options) {
  const int side = options.output_size;
  const Image composed = resize_bilinear(compose_prompt(image, mask, recipe, options), side, side);
  backbone::AttentionMaskPolicy policy;
  if (recipe.attention != AttentionMaskMode::None) {
    policy.mode = recipe.attention;
    // layer 11 of a 12-layer tower; shallower backbones use their last block
    policy.layer = std::min(recipe.attention_layer, model.config().vision_layers - 1);
    policy.grid_mask = downsample_to_grid(resize_nearest(mask, side, side), model.config().patch_size);
  }
  return model.encode_image_embedding(composed, policy);
}

namespace {

VectorD normalized(const VectorD& v) {
  const double n = v.norm();
  return n > 0 ? VectorD(v / n) : v;
}

std::vector<double> softmax(const std::vector<double>& logits) {
  const double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double total = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) total += out[i] = std::exp(logits[i] - m);
  for (auto& v : out) v /= total;
  return out;
}

struct SampleContext {
  VectorD original;
  std::vector<VectorD> names;
  std::size_t target = 0;
};

SampleContext prepare(const backbone::Backbone& model, const Image& image, const Mask& mask,
                      std::string_view target_name, const std::vector<std::string>& candidates,
                      const CompositionOptions& options) {
  SampleContext ctx;
  const auto it = std::find(candidates.begin(), candidates.end(), target_name);
  if (it == candidates.end()) throw InputError("target name '" + std::string(target_name) + "' not among candidates");
  ctx.target = static_cast<std::size_t>(it - candidates.begin());
  ctx.original = normalized(encode_visual_prompt(model, image, mask, parse_recipe("none"), options));
  for (const auto& name : candidates) ctx.names.push_back(normalized(model.encode_text(name)));
  return ctx;
}

AlignmentResult score(const backbone::Backbone& model, const SampleContext& ctx, const Image& image, const Mask& mask,
                      const CompositionRecipe& recipe, const CompositionOptions& options) {
  const VectorD highlighted = normalized(encode_visual_prompt(model, image, mask, recipe, options));
  std::vector<double> logits_h, logits_o;
  for (const auto& t : ctx.names) {
    logits_h.push_back(kAlignmentLogitScale * highlighted.dot(t));
    logits_o.push_back(kAlignmentLogitScale * ctx.original.dot(t));
  }
  AlignmentResult r;
  r.recipe_id = recipe.id;
  const VectorD& t0 = ctx.names[ctx.target];
  r.delta_p = highlighted.dot(t0) - ctx.original.dot(t0);
  r.softmax_distribution = softmax(logits_h);
  r.delta_prob = r.softmax_distribution[ctx.target] - softmax(logits_o)[ctx.target];
  return r;
}

struct Partial {
  std::size_t n = 0;
  double sum = 0, sum_sq = 0, sum_prob = 0;
  std::size_t skipped = 0;
};

}  // namespace

AlignmentResult alignment_delta(const backbone::Backbone& model, const Image& image, const Mask& mask,
                                std::string_view target_name, const std::vector<std::string>& candidate_names,
                                const CompositionRecipe& recipe, const CompositionOptions& options) {
  const SampleContext ctx = prepare(model, image, mask, target_name, candidate_names, options);
  return score(model, ctx, image, mask, recipe, options);
}

BenchmarkTable run_prompt_benchmark(const backbone::Backbone& model, const std::vector<PromptSample>& samples,
                                    const std::vector<std::string>& recipe_ids, const RecipeRegistry& registry,
                                    const CompositionOptions& options, unsigned workers) {
  if (samples.empty()) throw InputError("prompt benchmark needs at least one sample");
  if (recipe_ids.empty()) throw InputError("prompt benchmark needs at least one recipe");
  std::vector<CompositionRecipe> recipes;
  for (const auto& id : recipe_ids) recipes.push_back(registry.find(id));

  workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(samples.size())));
  std::vector<std::vector<Partial>> partials(workers, std::vector<Partial>(recipes.size()));
  auto run_shard = [&](unsigned shard) {
    auto& mine = partials[shard];
    for (std::size_t s = shard; s < samples.size(); s += workers) {
      const auto& sample = samples[s];
      std::vector<std::string> candidates{sample.target};
      candidates.insert(candidates.end(), sample.distractors.begin(), sample.distractors.end());
      SampleContext ctx;
      try {
        ctx = prepare(model, sample.image, sample.mask, sample.target, candidates, options);
      } catch (const Error& e) {
        spdlog::warn("prompt benchmark: sample {} skipped: {}", s, e.what());
        for (auto& p : mine) ++p.skipped;
        continue;
      }
      for (std::size_t r = 0; r < recipes.size(); ++r) {
        try {
          const AlignmentResult res = score(model, ctx, sample.image, sample.mask, recipes[r], options);
          auto& p = mine[r];
          ++p.n;
          p.sum += res.delta_p;
          p.sum_sq += res.delta_p * res.delta_p;
          p.sum_prob += res.delta_prob;
        } catch (const Error& e) {
          spdlog::warn("prompt benchmark: sample {} recipe '{}' skipped: {}", s, recipes[r].id, e.what());
          ++mine[r].skipped;
        }
      }
    }
  };
  if (workers == 1) {
    run_shard(0);
  } else {
    std::vector<std::thread> threads;
    for (unsigned w = 0; w < workers; ++w) threads.emplace_back(run_shard, w);
    for (auto& t : threads) t.join();
  }

  BenchmarkTable table;
  for (std::size_t r = 0; r < recipes.size(); ++r) {
    Partial total;
    for (const auto& shard : partials) {
      total.n += shard[r].n;
      total.sum += shard[r].sum;
      total.sum_sq += shard[r].sum_sq;
      total.sum_prob += shard[r].sum_prob;
      total.skipped += shard[r].skipped;
    }
    RecipeScore row;
    row.recipe_id = recipes[r].id;
    row.label = registry.label(recipes[r].id);
    row.n_samples = total.n;
    row.skipped = total.skipped;
    if (total.n > 0) {
      const double n = static_cast<double>(total.n);
      row.mean_delta_p = total.sum / n;
      row.mean_delta_prob = total.sum_prob / n;
      if (total.n > 1) {
        const double var = (total.sum_sq - n * row.mean_delta_p * row.mean_delta_p) / (n - 1.0);
        row.std_delta_p = std::sqrt(std::max(0.0, var));
      }
    }
    table.rows.push_back(row);
  }
  std::stable_sort(table.rows.begin(), table.rows.end(),
                   [](const RecipeScore& a, const RecipeScore& b) { return a.mean_delta_p > b.mean_delta_p; });
  return table;
}

void BenchmarkTable::write_csv(std::ostream& out) const {
  out << "recipe_id,n_samples,mean_delta_p,std,skipped,mean_delta_p_x100,mean_delta_prob\n";
  out << std::setprecision(10);
  for (const auto& r : rows) {
    out << '"' << r.recipe_id << "\"," << r.n_samples << ',' << r.mean_delta_p << ',' << r.std_delta_p << ','
        << r.skipped << ',' << 100.0 * r.mean_delta_p << ',' << r.mean_delta_prob << '\n';
  }
}

std::string BenchmarkTable::pretty() const {
  std::size_t label_width = 6;
  for (const auto& r : rows) label_width = std::max(label_width, r.label.size());
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(label_width)) << "recipe" << "  " << std::right << std::setw(8)
     << "n" << std::setw(12) << "dP x100" << std::setw(10) << "std" << std::setw(9) << "skipped" << '\n';
  os << std::string(label_width + 41, '-') << '\n';
  for (const auto& r : rows) {
    os << std::left << std::setw(static_cast<int>(label_width)) << r.label << "  " << std::right << std::setw(8)
       << r.n_samples << std::setw(12) << std::fixed << std::setprecision(2) << 100.0 * r.mean_delta_p
       << std::setw(10) << 100.0 * r.std_delta_p << std::setw(9) << r.skipped << '\n';
  }
  return os.str();
}

}  // namespace promptseg::prompts
