#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "promptseg/backbone/backbone.hpp"
#include "promptseg/conditioning.hpp"
#include "promptseg/decoder/checkpoint.hpp"
#include "promptseg/decoder/decoder.hpp"
#include "promptseg/image.hpp"

namespace promptseg {

// Largest multiples of `patch` not exceeding the image sides (at least one
// patch each).
std::pair<int, int> patch_aligned_size(int width, int height, int patch);

MatrixD resize_map(const MatrixD& values, int width, int height);

// Frozen backbone + trained decoder + conditioner, ready for inference.
// Every const member is safe to call concurrently.
class Segmenter {
 public:
  Segmenter(const backbone::Backbone& backbone, const decoder::Decoder& decoder);

  // Image sides must be multiples of the patch size.
  decoder::SegmentationLogits logits(const Image& image, const conditioning::ConditionalVector& c) const;
  conditioning::ConditionalVector condition(const conditioning::PromptSpec& spec) const;
  // Any image size: inputs are resized to patch-aligned sides (or to
  // input_size x input_size when set) and probabilities mapped back.
  MatrixD probabilities(const Image& image, const conditioning::ConditionalVector& c) const;
  MatrixD probabilities(const Image& image, const conditioning::PromptSpec& spec) const;
  // Encodes the image once for several conditionals.
  std::vector<MatrixD> probabilities(const Image& image, const std::vector<conditioning::ConditionalVector>& cs) const;

  void set_input_size(std::optional<int> side) { input_size_ = side; }
  const backbone::Backbone& backbone() const { return backbone_; }
  const decoder::Decoder& decoder() const { return decoder_; }
  const conditioning::Conditioner& conditioner() const { return conditioner_; }

 private:
  const backbone::Backbone& backbone_;
  const decoder::Decoder& decoder_;
  conditioning::Conditioner conditioner_;
  std::optional<int> input_size_;
};

// Owns everything a checkpoint needs at inference time.
struct LoadedModel {
  std::unique_ptr<backbone::Backbone> backbone;
  std::unique_ptr<decoder::Decoder> decoder;
  std::unique_ptr<Segmenter> segmenter;
  nlohmann::json extra;
  std::string model_hash;  // decoder config hash + backbone hash
};

// Rebuilds the backbone from the checkpoint's backbone metadata and checks
// it against the stored hash (ConfigError on mismatch).
LoadedModel load_model(const std::filesystem::path& checkpoint);

}  // namespace promptseg
