#include "promptseg/conditioning.hpp"

#include <algorithm>
#include <cmath>

#include "promptseg/error.hpp"

namespace promptseg::conditioning {

PromptSpec PromptSpec::from_text(std::string text) {
  PromptSpec p;
  p.kind = Kind::Text;
  p.text = std::move(text);
  return p;
}

PromptSpec PromptSpec::from_support(Image image, Mask mask, std::string recipe) {
  PromptSpec p;
  p.kind = Kind::Visual;
  SupportPrompt s;
  s.image = std::move(image);
  s.mask = std::move(mask);
  s.recipe = std::move(recipe);
  p.support = std::move(s);
  return p;
}

PromptSpec PromptSpec::interpolated(std::string text, Image image, Mask mask, double a, std::string recipe) {
  PromptSpec p = from_support(std::move(image), std::move(mask), std::move(recipe));
  p.kind = Kind::Interpolated;
  p.text = std::move(text);
  p.weight = a;
  return p;
}

void PromptSpec::validate() const {
  const bool has_text = text && !text->empty();
  const bool has_support = support && support->image && support->mask;
  switch (kind) {
    case Kind::Text:
      if (!has_text) throw InputError("text prompt requires a non-empty text");
      break;
    case Kind::Visual:
      if (!has_support) throw InputError("visual prompt requires a support image and mask");
      break;
    case Kind::Interpolated:
      if (!has_text || !has_support) throw InputError("interpolated prompt requires text, support image and mask");
      if (!weight) throw InputError("interpolated prompt requires a weight a");
      break;
  }
  if (weight && !(*weight >= 0.0 && *weight <= 1.0)) throw InputError("interpolation weight a must lie in [0, 1]");
}

std::string to_string(PromptSpec::Kind kind) {
  switch (kind) {
    case PromptSpec::Kind::Text:
      return "text";
    case PromptSpec::Kind::Visual:
      return "visual";
    case PromptSpec::Kind::Interpolated:
      return "interpolated";
  }
  return "unknown";
}

std::string PromptSpec::summary() const {
  std::string s = to_string(kind);
  if (text) s += " text=\"" + *text + "\"";
  if (support) s += " recipe=" + support->recipe;
  if (weight) s += " a=" + std::to_string(*weight);
  return s;
}

nlohmann::json to_json(const PromptSpec& spec) {
  nlohmann::json j;
  j["kind"] = to_string(spec.kind);
  if (spec.text) j["text"] = *spec.text;
  if (spec.support) {
    j["support"] = {{"image", spec.support->image_path},
                    {"mask", spec.support->mask_path},
                    {"recipe", spec.support->recipe}};
  }
  if (spec.weight) j["a"] = *spec.weight;
  return j;
}

PromptSpec prompt_from_json(const nlohmann::json& j, bool load_images) {
  PromptSpec p;
  const std::string kind = j.value("kind", "text");
  if (kind == "text") {
    p.kind = PromptSpec::Kind::Text;
  } else if (kind == "visual") {
    p.kind = PromptSpec::Kind::Visual;
  } else if (kind == "interpolated") {
    p.kind = PromptSpec::Kind::Interpolated;
  } else {
    throw InputError("unknown prompt kind '" + kind + "'");
  }
  if (j.contains("text") && !j["text"].is_null()) p.text = j["text"].get<std::string>();
  if (j.contains("support") && !j["support"].is_null()) {
    const auto& s = j["support"];
    SupportPrompt sp;
    sp.image_path = s.value("image", "");
    sp.mask_path = s.value("mask", "");
    sp.recipe = s.value("recipe", std::string(prompts::RecipeRegistry::kBestRecipe));
    if (load_images) {
      sp.image = load_image(sp.image_path);
      sp.mask = load_mask(sp.mask_path);
    }
    p.support = std::move(sp);
  }
  if (j.contains("a") && !j["a"].is_null()) p.weight = j["a"].get<double>();
  if (load_images) p.validate();
  return p;
}

ConditionalVector interpolate(const ConditionalVector& s, const ConditionalVector& t, double a) {
  if (!(a >= 0.0 && a <= 1.0)) throw InputError("interpolation weight a must lie in [0, 1]");
  if (s.values.size() != t.values.size()) throw InputError("conditional vectors differ in dimension");
  if (a == 1.0) return {s.values, "interpolated(a=1) " + s.provenance};
  if (a == 0.0) return {t.values, "interpolated(a=0) " + t.provenance};
  ConditionalVector out;
  out.values.resize(s.values.size());
  for (Eigen::Index i = 0; i < s.values.size(); ++i) {
    const double v = a * s.values[i] + (1.0 - a) * t.values[i];
    // rounding must not leave the segment between the two endpoints
    out.values[i] = std::clamp(v, std::min(s.values[i], t.values[i]), std::max(s.values[i], t.values[i]));
  }
  out.provenance = "interpolated(a=" + std::to_string(a) + ")";
  return out;
}

double sample_interpolation_weight(std::mt19937_64& rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

Conditioner::Conditioner(const backbone::Backbone& model, prompts::RecipeRegistry registry)
    : Conditioner(model, std::move(registry), prompts::CompositionOptions{}) {
  options_.output_size = model.config().native_image_size();
}

Conditioner::Conditioner(const backbone::Backbone& model, prompts::RecipeRegistry registry,
                         prompts::CompositionOptions options)
    : model_(model), registry_(std::move(registry)), options_(options) {
  if (options_.output_size % model.config().patch_size != 0) {
    throw ConfigError("composition output size must be a multiple of the patch size");
  }
}

ConditionalVector Conditioner::from_text(std::string_view prompt) const {
  return {model_.encode_text(prompt), "text \"" + std::string(prompt) + "\""};
}

ConditionalVector Conditioner::from_visual(const Image& support_image, const Mask& support_mask,
                                           std::string_view recipe) const {
  if (support_mask.width != support_image.width || support_mask.height != support_image.height) {
    throw InputError("support mask and image differ in size");
  }
  if (!support_mask.any()) throw DegenerateMaskError("support mask is empty");
  const auto parsed = registry_.find(recipe);
  return {prompts::encode_visual_prompt(model_, support_image, support_mask, parsed, options_),
          "visual recipe=" + parsed.id};
}

ConditionalVector Conditioner::condition(const PromptSpec& spec) const {
  spec.validate();
  switch (spec.kind) {
    case PromptSpec::Kind::Text:
      return from_text(*spec.text);
    case PromptSpec::Kind::Visual:
      return from_visual(*spec.support->image, *spec.support->mask, spec.support->recipe);
    case PromptSpec::Kind::Interpolated: {
      const double a = *spec.weight;
      // skip the unused encoder at the endpoints
      if (a == 0.0) return interpolate(from_text(*spec.text), from_text(*spec.text), 0.0);
      if (a == 1.0) {
        const auto s = from_visual(*spec.support->image, *spec.support->mask, spec.support->recipe);
        return interpolate(s, s, 1.0);
      }
      return interpolate(from_visual(*spec.support->image, *spec.support->mask, spec.support->recipe),
                         from_text(*spec.text), a);
    }
  }
  throw InputError("unknown prompt kind");
}

}  // namespace promptseg::conditioning
