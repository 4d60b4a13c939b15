#pragma once

#include <optional>
#include <random>
#include <string>
#include <string_view>

#include <json.hpp>

#include "promptseg/backbone/backbone.hpp"
#include "promptseg/image.hpp"
#include "promptseg/tensor.hpp"
#include "promptseg/visual_prompts.hpp"

namespace promptseg::conditioning {

// A point in the joint embedding space telling the decoder what to segment.
// `provenance` is descriptive only; the decoder never sees it.
struct ConditionalVector {
  VectorD values;
  std::string provenance;
};

struct SupportPrompt {
  std::string image_path;
  std::string mask_path;
  std::optional<Image> image;
  std::optional<Mask> mask;
  std::string recipe = prompts::RecipeRegistry::kBestRecipe;
};

struct PromptSpec {
  enum class Kind { Text, Visual, Interpolated };

  Kind kind = Kind::Text;
  std::optional<std::string> text;
  std::optional<SupportPrompt> support;
  std::optional<double> weight;  // a: 1 = support only, 0 = text only

  static PromptSpec from_text(std::string text);
  static PromptSpec from_support(Image image, Mask mask, std::string recipe = prompts::RecipeRegistry::kBestRecipe);
  static PromptSpec interpolated(std::string text, Image image, Mask mask, double a,
                                 std::string recipe = prompts::RecipeRegistry::kBestRecipe);

  // Throws InputError when the fields required by `kind` are missing or a is
  // outside [0, 1].
  void validate() const;
  std::string summary() const;
};

std::string to_string(PromptSpec::Kind kind);

// {"kind": ..., "text": ..., "support": {"image": path, "mask": path, "recipe": ...}, "a": ...}
nlohmann::json to_json(const PromptSpec& spec);
// Support images are read from disk when load_images is set.
PromptSpec prompt_from_json(const nlohmann::json& j, bool load_images = true);

// Elementwise a * s + (1 - a) * t. Endpoints return the operands unchanged.
ConditionalVector interpolate(const ConditionalVector& s, const ConditionalVector& t, double a);

// Uniform draw from [0, 1].
double sample_interpolation_weight(std::mt19937_64& rng);

class Conditioner {
 public:
  Conditioner(const backbone::Backbone& model, prompts::RecipeRegistry registry = prompts::RecipeRegistry::standard());
  Conditioner(const backbone::Backbone& model, prompts::RecipeRegistry registry, prompts::CompositionOptions options);

  ConditionalVector from_text(std::string_view prompt) const;
  // Throws DegenerateMaskError for an empty mask and InputError when the mask
  // and image sizes differ.
  ConditionalVector from_visual(const Image& support_image, const Mask& support_mask, std::string_view recipe) const;
  ConditionalVector condition(const PromptSpec& spec) const;

  const prompts::RecipeRegistry& registry() const { return registry_; }
  const prompts::CompositionOptions& options() const { return options_; }
  const backbone::Backbone& backbone() const { return model_; }

 private:
  const backbone::Backbone& model_;
  prompts::RecipeRegistry registry_;
  prompts::CompositionOptions options_;
};

}  // namespace promptseg::conditioning
