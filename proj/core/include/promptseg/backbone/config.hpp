#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include <json.hpp>

namespace promptseg::backbone {

enum class Variant {
  PretrainedDualEncoder,  // weights loaded from BackboneConfig::weights_path
  StandInRandom,          // deterministic random weights, same interface
  ImagenetVitStandIn,     // random vision tower under a separate seed; shares the text tower
};

std::string to_string(Variant v);
Variant variant_from_string(std::string_view name);

struct GridSize {
  int rows = 0;
  int cols = 0;
  int tokens() const { return 1 + rows * cols; }
  friend bool operator==(const GridSize&, const GridSize&) = default;
};

struct BackboneConfig {
  Variant variant = Variant::StandInRandom;

  int patch_size = 16;
  int vision_width = 768;
  int vision_layers = 12;
  int vision_heads = 12;
  int trained_grid = 14;
  int embed_dim = 512;

  int text_width = 512;
  int text_layers = 12;
  int text_heads = 8;
  int context_length = 77;
  int vocab_size = 49408;

  std::uint64_t seed = 20211014;
  std::string weights_path;  // pretrained variant only
  std::string bpe_path;      // optional BPE merges file; hashing tokenizer otherwise

  // ViT-B/16 geometry (P=16, D_vis=768, D_emb=512, 14x14 native grid).
  static BackboneConfig vit_b16();
  // Desk-scale geometry for unit tests and overfit runs: 32x32 native images,
  // P=4, 4 vision layers of width 64.
  static BackboneConfig tiny();

  int native_image_size() const { return trained_grid * patch_size; }
  void validate() const;
};

nlohmann::json to_json(const BackboneConfig& config);
BackboneConfig config_from_json(const nlohmann::json& j);

}  // namespace promptseg::backbone
