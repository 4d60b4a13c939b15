#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "promptseg/backbone/backbone.hpp"
#include "promptseg/decoder/layers.hpp"

namespace promptseg::decoder {

enum class Variant {
  ClipSeg,     // readout projections, FiLM, one transformer block per readout layer
  ClipDeconv,  // single readout, projection, FiLM, transposed-convolution head
};

// Which extracted layer feeds the first block.
enum class SkipOrder { DeepestFirst, ShallowestFirst };

std::string to_string(Variant v);
std::string to_string(SkipOrder o);

struct DecoderConfig {
  Variant variant = Variant::ClipSeg;
  int token_dim = 64;
  std::vector<int> readout_layers{3, 7, 9};
  std::optional<int> blocks;  // when set must equal readout_layers.size() for ClipSeg
  int heads = 4;
  int mlp_hidden = 2048;
  int patch_size = 16;
  int vision_width = 768;
  int embed_dim = 512;
  SkipOrder skip_order = SkipOrder::DeepestFirst;

  // Decoder geometry matching a backbone; readout layers and widths default
  // to the ViT-B/16 setting scaled to the backbone's depth.
  static DecoderConfig for_backbone(const backbone::BackboneConfig& backbone);
  static DecoderConfig deconv_for_backbone(const backbone::BackboneConfig& backbone);
  // Small decoder for desk-scale runs: D = 32, MLP width 128.
  static DecoderConfig tiny_for_backbone(const backbone::BackboneConfig& backbone);

  int num_blocks() const;
  // Readout positions in the order the projections consume them.
  std::vector<std::size_t> consumption_order() const;
  void validate() const;
  std::string hash() const;
};

nlohmann::json to_json(const DecoderConfig& c);
DecoderConfig decoder_config_from_json(const nlohmann::json& j);

struct DecoderParams {
  std::vector<Linear> readout_projections;  // indexed by consumption step
  Film film;
  std::vector<Block> blocks;
  Matrix head_weight;  // token_dim x P^2, one column per in-patch pixel
  Matrix head_bias;    // 1 x 1, shared by every pixel

  // Calls f(name, Matrix&) for every trainable tensor in a fixed order.
  template <typename F>
  void visit(F&& f);
  template <typename F>
  void visit(F&& f) const;

  DecoderParams zeros_like() const;
  std::size_t size() const;
};

struct SegmentationLogits {
  int height = 0;
  int width = 0;
  Matrix values;  // height x width
};

struct ParameterReport {
  struct Item {
    std::string submodule;
    std::size_t count = 0;
  };
  struct Attribution {
    std::string decision;
    long long delta = 0;  // contribution to (total - target)
    std::string note;
  };

  std::vector<Item> items;
  std::size_t total = 0;
  std::optional<std::size_t> target;
  std::vector<Attribution> attributions;

  long long unattributed() const;
  nlohmann::json to_json() const;
  std::string pretty() const;
};

inline constexpr std::size_t kReferenceParameterCount = 1'122'305;

class Decoder {
 public:
  struct Tape {
    std::vector<std::size_t> order;
    std::vector<Matrix> readout_inputs;
    FilmCache film;
    std::vector<BlockCache> blocks;
    Matrix final_tokens;
    backbone::GridSize grid;
  };

  // Deterministic initialisation per seed; throws ConfigError for an invalid
  // config.
  Decoder(DecoderConfig config, std::uint64_t seed);
  Decoder(DecoderConfig config, DecoderParams params);

  const DecoderConfig& config() const { return config_; }
  DecoderParams& params() { return params_; }
  const DecoderParams& params() const { return params_; }

  // The condition is a bare joint-space vector: nothing about its modality
  // reaches the decoder.
  SegmentationLogits forward(const backbone::ActivationReadout& readout, const VectorD& condition) const;
  // Records activations for backward. reduced_precision rounds intermediate
  // activations through float32.
  SegmentationLogits forward(const backbone::ActivationReadout& readout, const VectorD& condition, Tape& tape,
                             bool reduced_precision = false) const;
  // Accumulates dL/dparams into grads and returns dL/dcondition.
  VectorD backward(const Tape& tape, const Matrix& d_logits, DecoderParams& grads) const;

  ParameterReport parameter_report() const;

 private:
  DecoderConfig config_;
  DecoderParams params_;
};

template <typename F>
void DecoderParams::visit(F&& f) {
  for (std::size_t i = 0; i < readout_projections.size(); ++i) {
    const std::string p = "readout_proj." + std::to_string(i) + ".";
    f(p + "weight", readout_projections[i].weight);
    f(p + "bias", readout_projections[i].bias);
  }
  f("film.multiply.weight", film.multiply.weight);
  f("film.multiply.bias", film.multiply.bias);
  f("film.add.weight", film.add.weight);
  f("film.add.bias", film.add.bias);
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const std::string p = "blocks." + std::to_string(i) + ".";
    auto& b = blocks[i];
    f(p + "ln1.weight", b.ln1.weight);
    f(p + "ln1.bias", b.ln1.bias);
    f(p + "attn.qkv.weight", b.qkv.weight);
    f(p + "attn.qkv.bias", b.qkv.bias);
    f(p + "attn.out.weight", b.out.weight);
    f(p + "attn.out.bias", b.out.bias);
    f(p + "ln2.weight", b.ln2.weight);
    f(p + "ln2.bias", b.ln2.bias);
    f(p + "mlp.fc1.weight", b.fc1.weight);
    f(p + "mlp.fc1.bias", b.fc1.bias);
    f(p + "mlp.fc2.weight", b.fc2.weight);
    f(p + "mlp.fc2.bias", b.fc2.bias);
  }
  f("head.weight", head_weight);
  f("head.bias", head_bias);
}

template <typename F>
void DecoderParams::visit(F&& f) const {
  const_cast<DecoderParams*>(this)->visit([&](const std::string& name, Matrix& m) { f(name, std::as_const(m)); });
}

}  // namespace promptseg::decoder
