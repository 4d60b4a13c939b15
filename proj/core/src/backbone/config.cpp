#include "promptseg/backbone/config.hpp"

#include "promptseg/error.hpp"

namespace promptseg::backbone {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::PretrainedDualEncoder:
      return "pretrained-dual-encoder";
    case Variant::StandInRandom:
      return "stand-in-random";
    case Variant::ImagenetVitStandIn:
      return "imagenet-vit-stand-in";
  }
  return "unknown";
}

Variant variant_from_string(std::string_view name) {
  if (name == "pretrained-dual-encoder") return Variant::PretrainedDualEncoder;
  if (name == "stand-in-random") return Variant::StandInRandom;
  if (name == "imagenet-vit-stand-in") return Variant::ImagenetVitStandIn;
  throw ConfigError("unknown backbone variant '" + std::string(name) + "'");
}

BackboneConfig BackboneConfig::vit_b16() { return BackboneConfig{}; }

BackboneConfig BackboneConfig::tiny() {
  BackboneConfig c;
  c.patch_size = 4;
  c.vision_width = 64;
  c.vision_layers = 4;
  c.vision_heads = 4;
  c.trained_grid = 8;
  c.embed_dim = 32;
  c.text_width = 32;
  c.text_layers = 2;
  c.text_heads = 4;
  c.context_length = 16;
  c.vocab_size = 1024;
  return c;
}

void BackboneConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("backbone config: " + what);
  };
  require(patch_size > 0, "patch_size must be positive");
  require(trained_grid >= 1, "trained_grid must be >= 1");
  require(vision_width > 0 && vision_layers > 0 && vision_heads > 0, "vision tower dimensions must be positive");
  require(vision_width % vision_heads == 0, "vision_width must divide evenly among heads");
  require(text_width > 0 && text_layers > 0 && text_heads > 0, "text tower dimensions must be positive");
  require(text_width % text_heads == 0, "text_width must divide evenly among heads");
  require(embed_dim > 0, "embed_dim must be positive");
  require(context_length >= 3, "context_length must hold at least one token plus delimiters");
  require(vocab_size >= 3, "vocab_size too small");
  require(variant != Variant::PretrainedDualEncoder || !weights_path.empty(),
          "pretrained variant requires weights_path");
}

nlohmann::json to_json(const BackboneConfig& c) {
  return {
      {"variant", to_string(c.variant)},
      {"patch_size", c.patch_size},
      {"vision_width", c.vision_width},
      {"vision_layers", c.vision_layers},
      {"vision_heads", c.vision_heads},
      {"trained_grid", c.trained_grid},
      {"embed_dim", c.embed_dim},
      {"text_width", c.text_width},
      {"text_layers", c.text_layers},
      {"text_heads", c.text_heads},
      {"context_length", c.context_length},
      {"vocab_size", c.vocab_size},
      {"seed", c.seed},
      {"weights_path", c.weights_path},
      {"bpe_path", c.bpe_path},
  };
}

BackboneConfig config_from_json(const nlohmann::json& j) {
  BackboneConfig c;
  if (j.contains("variant")) c.variant = variant_from_string(j.at("variant").get<std::string>());
  auto read = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  read("patch_size", c.patch_size);
  read("vision_width", c.vision_width);
  read("vision_layers", c.vision_layers);
  read("vision_heads", c.vision_heads);
  read("trained_grid", c.trained_grid);
  read("embed_dim", c.embed_dim);
  read("text_width", c.text_width);
  read("text_layers", c.text_layers);
  read("text_heads", c.text_heads);
  read("context_length", c.context_length);
  read("vocab_size", c.vocab_size);
  read("seed", c.seed);
  read("weights_path", c.weights_path);
  read("bpe_path", c.bpe_path);
  c.validate();
  return c;
}

}  // namespace promptseg::backbone
