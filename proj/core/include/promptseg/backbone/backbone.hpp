#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "promptseg/backbone/attention_mask.hpp"
#include "promptseg/backbone/config.hpp"
#include "promptseg/image.hpp"
#include "promptseg/tensor.hpp"

namespace promptseg::backbone {

// Token matrices read out of the vision tower, in the order the layers were
// requested, plus the projected image embedding. Each matrix is
// (1 + rows * cols) x vision_width with the CLS token in row 0. A readout at
// layer k is the output of block k, counting from 0.
struct ActivationReadout {
  std::vector<int> layers;
  std::vector<MatrixD> tokens;
  VectorD image_embedding;
  GridSize grid;
};

// Frozen image + text encoder pair sharing a joint embedding space.
//
// Weights are immutable once constructed; every const member is safe to call
// concurrently.
class Backbone {
 public:
  explicit Backbone(BackboneConfig config);
  ~Backbone();
  Backbone(const Backbone&) = delete;
  Backbone& operator=(const Backbone&) = delete;

  const BackboneConfig& config() const { return config_; }

  // Throws SizingError unless both sides are positive multiples of the patch
  // size, ConfigError for out-of-range readout layers.
  ActivationReadout encode_image(const Image& image, std::span<const int> readout_layers,
                                 const AttentionMaskPolicy& policy = {}) const;
  VectorD encode_image_embedding(const Image& image, const AttentionMaskPolicy& policy = {}) const;

  // Throws InputError on an empty prompt; prompts longer than the context
  // window are truncated with a logged warning.
  VectorD encode_text(std::string_view prompt) const;

  // Model metadata sidecar: variant, geometry, interpolation kernel and the
  // readout layer convention.
  nlohmann::json metadata() const;
  std::string metadata_hash() const;

  // FNV-1a over every weight, in name order.
  std::uint64_t parameter_checksum() const;
  std::size_t parameter_count() const;

  void save_weights(const std::filesystem::path& path) const;

  struct Weights;

 private:
  BackboneConfig config_;
  std::unique_ptr<Weights> weights_;
  std::uint64_t load_checksum_ = 0;
};

}  // namespace promptseg::backbone
