#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "promptseg/backbone/attention_mask.hpp"
#include "promptseg/backbone/backbone.hpp"
#include "promptseg/image.hpp"
#include "promptseg/tensor.hpp"

namespace promptseg::prompts {

enum class CropContext { Tight, Large };

struct CompositionStep {
  enum class Kind { None, BgIntensity, BgBlur, Crop, Outline, GrayscaleDye, Highlight };

  Kind kind = Kind::None;
  double alpha = 1.0;                   // bg_intensity factor, highlight blend weight
  std::optional<double> sigma;          // bg_blur, pixels at model input resolution
  CropContext context = CropContext::Tight;
  std::optional<int> width;             // outline width in pixels
  Rgb color{1.f, 0.f, 0.f};

  std::string to_string() const;
};

// Ordered composition steps plus an optional in-model attention restriction.
//
// Recipes are written as '+'-joined steps, e.g. "crop+bg_intensity(0.1)+bg_blur":
//   none | bg_intensity(a) | bg_blur[(sigma)] | crop[(tight|large)] |
//   outline[(width)] | grayscale_dye | highlight[(a)] |
//   clip_mask(cls_layer[,k]) | clip_mask(cls_all) | clip_mask(all_all)
struct CompositionRecipe {
  std::string id;
  std::vector<CompositionStep> steps;
  backbone::AttentionMaskMode attention = backbone::AttentionMaskMode::None;
  int attention_layer = 11;

  bool has_crop() const;
};

CompositionRecipe parse_recipe(std::string_view text);

struct CompositionOptions {
  int output_size = 224;      // model input side; crops are resized to it
  double blur_sigma = 10.0;   // default bg_blur sigma at model input resolution
  double large_margin = 0.5;  // crop(large): box grows by this fraction of its size per side
  int outline_width = 3;
};

// Recipes by id. Unknown ids are parsed on lookup, so any well-formed recipe
// string is accepted.
class RecipeRegistry {
 public:
  struct Entry {
    CompositionRecipe recipe;
    std::string label;
  };

  // The composition variants of the alignment study, plus "highlight".
  static RecipeRegistry standard();
  static constexpr const char* kBestRecipe = "crop+bg_intensity(0.1)+bg_blur";

  void add(std::string id, std::string label);
  CompositionRecipe find(std::string_view id) const;
  std::vector<std::string> ids() const;
  std::string label(std::string_view id) const;

 private:
  std::vector<Entry> entries_;
};

// Crop window in input pixel coordinates: the mask bounding box (tight) or the
// box grown by `margin` of its size on every side, clipped to the image.
Box crop_box(const Mask& mask, CropContext context, double margin);

// Applies the recipe's image steps in order. Throws InputError for a
// non-binary or mis-sized mask and DegenerateMaskError for crop on an empty
// mask.
Image compose_prompt(const Image& image, const Mask& mask, const CompositionRecipe& recipe,
                     const CompositionOptions& options = {});

// Embedding of the engineered prompt image at options.output_size, with the
// recipe's attention restriction (if any) applied inside the encoder.
VectorD encode_visual_prompt(const backbone::Backbone& model, const Image& image, const Mask& mask,
                             const CompositionRecipe& recipe, const CompositionOptions& options);

inline constexpr double kAlignmentLogitScale = 100.0;

struct AlignmentResult {
  std::string recipe_id;
  double delta_p = 0.0;      // cosine(s_h, t_0) - cosine(s_o, t_0)
  double delta_prob = 0.0;   // softmax probability of the target, highlighted minus original
  std::vector<double> softmax_distribution;  // over candidate names, highlighted image
  double delta_p_x100() const { return 100.0 * delta_p; }
};

// candidate_names must contain target_name.
AlignmentResult alignment_delta(const backbone::Backbone& model, const Image& image, const Mask& mask,
                                std::string_view target_name, const std::vector<std::string>& candidate_names,
                                const CompositionRecipe& recipe, const CompositionOptions& options);

struct PromptSample {
  Image image;
  Mask mask;
  std::string target;
  std::vector<std::string> distractors;
};

struct RecipeScore {
  std::string recipe_id;
  std::string label;
  std::size_t n_samples = 0;
  double mean_delta_p = 0.0;
  double std_delta_p = 0.0;
  double mean_delta_prob = 0.0;
  std::size_t skipped = 0;
};

struct BenchmarkTable {
  std::vector<RecipeScore> rows;  // sorted by mean_delta_p, descending

  void write_csv(std::ostream& out) const;
  std::string pretty() const;
};

// Runs every recipe over every sample; per-sample failures are logged and
// counted in `skipped`. Samples are split across `workers` threads.
BenchmarkTable run_prompt_benchmark(const backbone::Backbone& model, const std::vector<PromptSample>& samples,
                                    const std::vector<std::string>& recipe_ids, const RecipeRegistry& registry,
                                    const CompositionOptions& options, unsigned workers = 1);

}  // namespace promptseg::prompts
