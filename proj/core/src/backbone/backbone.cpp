#include "promptseg/backbone/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <spdlog/spdlog.h>

#include "promptseg/backbone/positional.hpp"
#include "promptseg/backbone/tokenizer.hpp"
#include "promptseg/error.hpp"
#include "promptseg/hashing.hpp"
#include "promptseg/tensor_archive.hpp"
#include "transformer.hpp"

namespace promptseg::backbone {

namespace {

constexpr float kPixelMean[3] = {0.48145466f, 0.4578275f, 0.40821073f};
constexpr float kPixelStd[3] = {0.26862954f, 0.26130258f, 0.27577711f};

}  // namespace

struct Backbone::Weights {
  // vision tower
  MatrixF patch_embedding;  // width x (3 * P * P), channel-major patch layout
  MatrixF class_embedding;  // 1 x width
  MatrixF vision_positional;
  MatrixF ln_pre_weight, ln_pre_bias;
  std::vector<detail::ResidualBlock> vision_blocks;
  MatrixF ln_post_weight, ln_post_bias;
  MatrixF vision_projection;  // width x embed_dim

  // text tower
  MatrixF token_embedding;  // vocab x text_width
  MatrixF text_positional;  // context x text_width
  std::vector<detail::ResidualBlock> text_blocks;
  MatrixF ln_final_weight, ln_final_bias;
  MatrixF text_projection;  // text_width x embed_dim

  std::unique_ptr<Tokenizer> tokenizer;

  template <typename Self, typename F>
  static void visit(Self& self, F&& f) {
    f("visual.conv1.weight", self.patch_embedding);
    f("visual.class_embedding", self.class_embedding);
    f("visual.positional_embedding", self.vision_positional);
    f("visual.ln_pre.weight", self.ln_pre_weight);
    f("visual.ln_pre.bias", self.ln_pre_bias);
    for (std::size_t i = 0; i < self.vision_blocks.size(); ++i) {
      const_cast<detail::ResidualBlock&>(self.vision_blocks[i])
          .visit("visual.transformer.resblocks." + std::to_string(i) + ".", f);
    }
    f("visual.ln_post.weight", self.ln_post_weight);
    f("visual.ln_post.bias", self.ln_post_bias);
    f("visual.proj", self.vision_projection);
    f("token_embedding.weight", self.token_embedding);
    f("positional_embedding", self.text_positional);
    for (std::size_t i = 0; i < self.text_blocks.size(); ++i) {
      const_cast<detail::ResidualBlock&>(self.text_blocks[i])
          .visit("transformer.resblocks." + std::to_string(i) + ".", f);
    }
    f("ln_final.weight", self.ln_final_weight);
    f("ln_final.bias", self.ln_final_bias);
    f("text_projection", self.text_projection);
  }
};

namespace {

void init_vision(Backbone::Weights& w, const BackboneConfig& c, std::uint64_t seed) {
  using detail::gaussian;
  std::mt19937_64 rng(seed);
  const int width = c.vision_width;
  const float scale = 1.f / std::sqrt(static_cast<float>(width));
  const int patch_dim = 3 * c.patch_size * c.patch_size;
  w.patch_embedding = gaussian(width, patch_dim, 1.f / std::sqrt(static_cast<float>(patch_dim)), rng);
  w.class_embedding = gaussian(1, width, scale, rng);
  w.vision_positional = gaussian(1 + c.trained_grid * c.trained_grid, width, scale, rng);
  w.ln_pre_weight = MatrixF::Ones(1, width);
  w.ln_pre_bias = MatrixF::Zero(1, width);
  w.vision_blocks.clear();
  for (int i = 0; i < c.vision_layers; ++i) w.vision_blocks.push_back(detail::make_block(width, c.vision_layers, rng));
  w.ln_post_weight = MatrixF::Ones(1, width);
  w.ln_post_bias = MatrixF::Zero(1, width);
  w.vision_projection = gaussian(width, c.embed_dim, scale, rng);
}

void init_text(Backbone::Weights& w, const BackboneConfig& c, std::uint64_t seed) {
  using detail::gaussian;
  std::mt19937_64 rng(seed);
  const int width = c.text_width;
  w.token_embedding = gaussian(c.vocab_size, width, 0.02f, rng);
  w.text_positional = gaussian(c.context_length, width, 0.01f, rng);
  w.text_blocks.clear();
  for (int i = 0; i < c.text_layers; ++i) w.text_blocks.push_back(detail::make_block(width, c.text_layers, rng));
  w.ln_final_weight = MatrixF::Ones(1, width);
  w.ln_final_bias = MatrixF::Zero(1, width);
  w.text_projection = gaussian(width, c.embed_dim, 1.f / std::sqrt(static_cast<float>(width)), rng);
}

// Shapes every weight must have for a given geometry.
void allocate(Backbone::Weights& w, const BackboneConfig& c) {
  const int vw = c.vision_width, tw = c.text_width;
  w.patch_embedding.resize(vw, 3 * c.patch_size * c.patch_size);
  w.class_embedding.resize(1, vw);
  w.vision_positional.resize(1 + c.trained_grid * c.trained_grid, vw);
  w.ln_pre_weight.resize(1, vw);
  w.ln_pre_bias.resize(1, vw);
  w.vision_blocks.assign(static_cast<std::size_t>(c.vision_layers), detail::empty_block(vw));
  w.ln_post_weight.resize(1, vw);
  w.ln_post_bias.resize(1, vw);
  w.vision_projection.resize(vw, c.embed_dim);
  w.token_embedding.resize(c.vocab_size, tw);
  w.text_positional.resize(c.context_length, tw);
  w.text_blocks.assign(static_cast<std::size_t>(c.text_layers), detail::empty_block(tw));
  w.ln_final_weight.resize(1, tw);
  w.ln_final_bias.resize(1, tw);
  w.text_projection.resize(tw, c.embed_dim);
}

}  // namespace

Backbone::Backbone(BackboneConfig config) : config_(std::move(config)), weights_(std::make_unique<Weights>()) {
  config_.validate();
  switch (config_.variant) {
    case Variant::StandInRandom:
      init_vision(*weights_, config_, config_.seed);
      init_text(*weights_, config_, config_.seed + 1);
      break;
    case Variant::ImagenetVitStandIn:
      // different vision weights; the text tower matches the stand-in
      init_vision(*weights_, config_, config_.seed ^ 0x9E3779B97F4A7C15ull);
      init_text(*weights_, config_, config_.seed + 1);
      break;
    case Variant::PretrainedDualEncoder: {
      const TensorArchive archive = TensorArchive::load(config_.weights_path);
      allocate(*weights_, config_);
      Weights::visit(*weights_, [&](const std::string& name, MatrixF& m) {
        m = archive.get_f32(name, m.rows(), m.cols());
      });
      break;
    }
  }
  if (!config_.bpe_path.empty()) {
    auto bpe = std::make_unique<BpeTokenizer>(BpeTokenizer::from_file(config_.bpe_path));
    if (bpe->vocab_size() != config_.vocab_size) {
      throw ConfigError("BPE vocabulary size " + std::to_string(bpe->vocab_size()) +
                        " does not match backbone vocab_size " + std::to_string(config_.vocab_size));
    }
    weights_->tokenizer = std::move(bpe);
  } else {
    weights_->tokenizer = std::make_unique<HashTokenizer>(config_.vocab_size);
  }
  load_checksum_ = parameter_checksum();
}

Backbone::~Backbone() = default;

ActivationReadout Backbone::encode_image(const Image& image, std::span<const int> readout_layers,
                                         const AttentionMaskPolicy& policy) const {
  const int P = config_.patch_size;
  if (image.empty() || image.width % P != 0 || image.height % P != 0) {
    throw SizingError("image size " + std::to_string(image.width) + "x" + std::to_string(image.height) +
                      " is not a positive multiple of patch size " + std::to_string(P));
  }
  for (int layer : readout_layers) {
    if (layer < 0 || layer >= config_.vision_layers) {
      throw ConfigError("readout layer " + std::to_string(layer) + " outside [0, " +
                        std::to_string(config_.vision_layers) + ")");
    }
  }
  const GridSize grid{image.height / P, image.width / P};
  policy.validate(grid);

  const Weights& w = *weights_;
  const int patch_dim = 3 * P * P;
  MatrixF patches(grid.rows * grid.cols, patch_dim);
  for (int gy = 0; gy < grid.rows; ++gy) {
    for (int gx = 0; gx < grid.cols; ++gx) {
      auto row = patches.row(gy * grid.cols + gx);
      for (int c = 0; c < 3; ++c)
        for (int y = 0; y < P; ++y)
          for (int x = 0; x < P; ++x)
            row(c * P * P + y * P + x) = (image.at(gy * P + y, gx * P + x, c) - kPixelMean[c]) / kPixelStd[c];
    }
  }

  MatrixF x(grid.tokens(), config_.vision_width);
  x.row(0) = w.class_embedding.row(0);
  x.bottomRows(grid.rows * grid.cols).noalias() = patches * w.patch_embedding.transpose();
  x += interpolate_positional_embeddings(w.vision_positional, grid);
  MatrixF normed;
  detail::layer_norm(x, w.ln_pre_weight, w.ln_pre_bias, normed);
  x = std::move(normed);

  ActivationReadout readout;
  readout.layers.assign(readout_layers.begin(), readout_layers.end());
  readout.tokens.resize(readout.layers.size());
  readout.grid = grid;

  detail::ScoreHook score_hook;
  if (policy.mode != AttentionMaskMode::None) {
    score_hook = [&policy](int layer, Eigen::Ref<MatrixF> scores) { apply_attention_mask(policy, layer, scores); };
  }
  auto block_hook = [&readout](int layer, const MatrixF& out) {
    for (std::size_t i = 0; i < readout.layers.size(); ++i) {
      if (readout.layers[i] == layer) readout.tokens[i] = out.cast<double>();
    }
  };
  detail::run_transformer(w.vision_blocks, config_.vision_heads, x, score_hook, block_hook);

  MatrixF cls;
  detail::layer_norm(x.topRows(1), w.ln_post_weight, w.ln_post_bias, cls);
  readout.image_embedding = (cls * w.vision_projection).row(0).transpose().cast<double>();
  return readout;
}

VectorD Backbone::encode_image_embedding(const Image& image, const AttentionMaskPolicy& policy) const {
  return encode_image(image, {}, policy).image_embedding;
}

VectorD Backbone::encode_text(std::string_view prompt) const {
  if (std::all_of(prompt.begin(), prompt.end(), [](char c) { return std::isspace(static_cast<unsigned char>(c)); })) {
    throw InputError("text prompt is empty");
  }
  const Weights& w = *weights_;
  const TokenizedText tok = tokenize_for_context(*w.tokenizer, prompt, config_.context_length);
  if (tok.truncated) {
    spdlog::warn("text prompt truncated to the {}-token context window: \"{}\"", config_.context_length, prompt);
  }
  // tokens beyond the end delimiter cannot influence it under causal masking,
  // so only the prefix is run
  const int n = tok.end_position + 1;
  MatrixF x(n, config_.text_width);
  for (int i = 0; i < n; ++i) {
    x.row(i) = w.token_embedding.row(tok.ids[static_cast<std::size_t>(i)]) + w.text_positional.row(i);
  }
  auto causal = [](int, Eigen::Ref<MatrixF> scores) {
    for (Eigen::Index r = 0; r < scores.rows(); ++r)
      for (Eigen::Index c = r + 1; c < scores.cols(); ++c) scores(r, c) = -std::numeric_limits<float>::infinity();
  };
  detail::run_transformer(w.text_blocks, config_.text_heads, x, causal, {});
  MatrixF pooled;
  detail::layer_norm(x.bottomRows(1), w.ln_final_weight, w.ln_final_bias, pooled);
  return (pooled * w.text_projection).row(0).transpose().cast<double>();
}

nlohmann::json Backbone::metadata() const {
  nlohmann::json j = to_json(config_);
  j["interpolation_kernel"] = kInterpolationKernel;
  j["readout_convention"] = "post-block output, 0-indexed";
  j["tokenizer"] = config_.bpe_path.empty() ? "hash" : "bpe";
  j["parameter_checksum"] = to_hex(load_checksum_);
  return j;
}

std::string Backbone::metadata_hash() const {
  Fnv1a h;
  h.update(metadata().dump());
  return h.hex();
}

std::uint64_t Backbone::parameter_checksum() const {
  Fnv1a h;
  Weights::visit(*weights_, [&](const std::string& name, const MatrixF& m) {
    h.update(name);
    h.update_values(std::span<const float>(m.data(), static_cast<std::size_t>(m.size())));
  });
  return h.digest();
}

std::size_t Backbone::parameter_count() const {
  std::size_t n = 0;
  Weights::visit(*weights_, [&](const std::string&, const MatrixF& m) { n += static_cast<std::size_t>(m.size()); });
  return n;
}

void Backbone::save_weights(const std::filesystem::path& path) const {
  TensorArchive archive;
  archive.metadata() = metadata();
  Weights::visit(*weights_, [&](const std::string& name, const MatrixF& m) { archive.put(name, m); });
  archive.save(path);
}

}  // namespace promptseg::backbone
