#include "promptseg/decoder/checkpoint.hpp"

#include <fstream>

#include "promptseg/error.hpp"
#include "promptseg/tensor_archive.hpp"

namespace promptseg::decoder {

void save_checkpoint(const std::filesystem::path& path, const Decoder& decoder, const backbone::Backbone& backbone,
                     const nlohmann::json& extra) {
  TensorArchive archive;
  auto& meta = archive.metadata();
  meta["kind"] = "promptseg-decoder";
  meta["decoder_config"] = to_json(decoder.config());
  meta["decoder_config_hash"] = decoder.config().hash();
  meta["backbone_metadata"] = backbone.metadata();
  meta["backbone_hash"] = backbone.metadata_hash();
  meta["parameter_report"] = decoder.parameter_report().to_json();
  meta["optimizer"] = kOptimizerDescription;
  meta["extra"] = extra;
  decoder.params().visit([&](const std::string& name, const Matrix& m) { archive.put(name, m); });
  archive.save(path);

  std::ofstream sidecar(path.string() + ".backbone.json");
  sidecar << backbone.metadata().dump(2) << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const TensorArchive archive = TensorArchive::load(path);
  const auto& meta = archive.metadata();
  if (meta.value("kind", "") != "promptseg-decoder") {
    throw FormatError(path.string() + " is not a decoder checkpoint");
  }
  DecoderConfig config;
  try {
    config = decoder_config_from_json(meta.at("decoder_config"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": malformed decoder config: " + e.what());
  }
  const std::string stored_hash = meta.value("decoder_config_hash", "");
  if (stored_hash != config.hash()) {
    throw FormatError(path.string() + ": decoder config hash " + stored_hash + " does not match the stored config (" +
                      config.hash() + ")");
  }
  DecoderParams params = Decoder(config, 0).params();
  params.visit([&](const std::string& name, Matrix& m) { m = archive.get_f64(name, m.rows(), m.cols()); });
  return Checkpoint{Decoder(config, std::move(params)), meta.at("backbone_metadata"),
                    meta.value("backbone_hash", ""), meta.value("extra", nlohmann::json::object())};
}

void verify_backbone(const Checkpoint& checkpoint, const backbone::Backbone& backbone) {
  if (checkpoint.backbone_hash != backbone.metadata_hash()) {
    throw ConfigError("checkpoint was trained against backbone " + checkpoint.backbone_hash + ", loaded backbone is " +
                      backbone.metadata_hash());
  }
}

}  // namespace promptseg::decoder
