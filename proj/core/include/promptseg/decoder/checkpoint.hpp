#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "promptseg/backbone/backbone.hpp"
#include "promptseg/decoder/decoder.hpp"

namespace promptseg::decoder {

inline constexpr const char* kOptimizerDescription = "adam(beta1=0.9,beta2=0.999,eps=1e-8)";

struct Checkpoint {
  Decoder decoder;
  nlohmann::json backbone_metadata;
  std::string backbone_hash;
  nlohmann::json extra;  // training config, step count, free-form provenance
};

// Writes the decoder parameters with the decoder config and its hash, the
// backbone metadata and hash, the parameter report and `extra` into one
// archive, plus a `<path>.backbone.json` sidecar.
void save_checkpoint(const std::filesystem::path& path, const Decoder& decoder, const backbone::Backbone& backbone,
                     const nlohmann::json& extra = nlohmann::json::object());

// Throws FormatError for a damaged container or a config hash that does not
// match the stored config.
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Throws ConfigError when the checkpoint was trained against a different
// backbone.
void verify_backbone(const Checkpoint& checkpoint, const backbone::Backbone& backbone);

}  // namespace promptseg::decoder
