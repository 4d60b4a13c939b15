#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "promptseg/backbone/backbone.hpp"
#include "promptseg/conditioning.hpp"
#include "promptseg/datasets.hpp"
#include "promptseg/decoder/decoder.hpp"

namespace promptseg::training {

struct TrainConfig {
  int iterations = 20000;
  int batch_size = 64;
  double lr0 = 1e-3;
  double lr_final = 1e-4;
  bool mixed_precision = false;
  std::uint64_t seed = 1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  bool use_visual = true;         // false: text conditionals only
  bool augment_prefixes = true;   // random prompt prefixes
  std::string recipe = prompts::RecipeRegistry::kBestRecipe;
  std::optional<int> image_size;  // square resize before encoding
  unsigned workers = 0;           // 0: hardware concurrency

  // Throws ConfigError on lr_final > lr0, iterations < 1 and the like.
  void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

// Decoder config + train config + data pointers read from one YAML file.
struct TrainJob {
  TrainConfig train;
  std::string backbone = "stand-in";  // stand-in | tiny | imagenet-stand-in | pretrained
  std::string weights_path;
  std::string bpe_path;
  std::string decoder_preset = "default";  // default | tiny | deconv
  nlohmann::json decoder_overrides = nlohmann::json::object();
  std::string data;                   // JSONL index, or "synth:<seed>:<n>"
  double q_neg = 0.2;
  std::string checkpoint = "checkpoint.pseg";
  std::string loss_curve = "loss.csv";
};

TrainJob load_train_job(const std::filesystem::path& yaml_path);
TrainJob train_job_from_yaml(const std::string& yaml_text);

// "stand-in" (random ViT-B/16 geometry), "tiny", "imagenet-stand-in" or
// "pretrained" (needs weights).
backbone::BackboneConfig backbone_config_for(const std::string& name, const std::string& weights_path = {},
                                             const std::string& bpe_path = {});
// Preset "default", "tiny" or "deconv", then field overrides.
decoder::DecoderConfig decoder_config_for(const std::string& preset, const backbone::BackboneConfig& backbone,
                                          const nlohmann::json& overrides = nlohmann::json::object());

// lr_final + (lr0 - lr_final) (1 + cos(pi step / iterations)) / 2.
// Throws InputError unless 0 <= step <= iterations.
double cosine_lr(int step, const TrainConfig& config);

struct StepLog {
  int step = 0;
  double lr = 0.0;
  double loss = 0.0;
};

struct TrainResult {
  std::vector<StepLog> curve;
  std::uint64_t backbone_checksum_before = 0;
  std::uint64_t backbone_checksum_after = 0;

  void write_csv(std::ostream& out) const;
};

// Mean pixelwise binary cross entropy of sigmoid(logits) against the mask,
// and its gradient with respect to the logits scaled by `scale`.
double bce_with_logits(const MatrixD& logits, const Mask& target, MatrixD* d_logits, double scale = 1.0);

// Decoder-only optimisation. The backbone is read through a const reference
// and never written.
class Trainer {
 public:
  Trainer(const backbone::Backbone& backbone, decoder::Decoder& decoder, TrainConfig config);

  // Throws NumericError naming the step and records when a loss is not
  // finite.
  TrainResult train(const std::vector<datasets::SampleRecord>& records,
                    const std::function<void(const StepLog&)>& on_step = {});

  const TrainConfig& config() const { return config_; }

 private:
  struct Prepared;
  const backbone::Backbone& backbone_;
  decoder::Decoder& decoder_;
  TrainConfig config_;
  conditioning::Conditioner conditioner_;
};

// Builds backbone, decoder and PC+ records from the job, trains, and writes
// the checkpoint and loss curve.
TrainResult run_train_job(const TrainJob& job, std::uint64_t decoder_seed = 0);

}  // namespace promptseg::training
