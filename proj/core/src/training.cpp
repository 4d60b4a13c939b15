#include "promptseg/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <ostream>
#include <sstream>
#include <thread>
#include <unordered_map>

#include <spdlog/spdlog.h>
#include <yaml-cpp/yaml.h>

#include "parallel.hpp"
#include "promptseg/decoder/checkpoint.hpp"
#include "promptseg/error.hpp"

namespace promptseg::training {

void TrainConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("train config: " + what);
  };
  require(iterations >= 1, "iterations must be at least 1");
  require(batch_size >= 1, "batch_size must be at least 1");
  require(lr0 >= 0.0 && lr_final >= 0.0, "learning rates must be nonnegative");
  require(lr_final <= lr0, "lr_final must not exceed lr0");
  require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && eps > 0.0, "invalid Adam constants");
  require(!image_size || *image_size > 0, "image_size must be positive");
}

nlohmann::json to_json(const TrainConfig& c) {
  nlohmann::json j{{"iterations", c.iterations}, {"batch_size", c.batch_size},
                   {"lr0", c.lr0},               {"lr_final", c.lr_final},
                   {"schedule", "cosine"},       {"warmup", 0},
                   {"mixed_precision", c.mixed_precision},
                   {"seed", c.seed},             {"beta1", c.beta1},
                   {"beta2", c.beta2},           {"eps", c.eps},
                   {"use_visual", c.use_visual}, {"augment_prefixes", c.augment_prefixes},
                   {"recipe", c.recipe},         {"workers", c.workers},
                   {"loss", "binary cross entropy"}};
  if (c.image_size) j["image_size"] = *c.image_size;
  return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  static const std::vector<std::string> known{"iterations", "batch_size", "lr0",      "lr_final",   "mixed_precision",
                                              "seed",       "beta1",      "beta2",    "eps",        "use_visual",
                                              "augment_prefixes", "recipe", "image_size", "workers", "schedule",
                                              "warmup",     "loss"};
  for (const auto& [key, _] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) throw ConfigError("unknown train field '" + key + "'");
  }
  try {
    auto read = [&](const char* key, auto& field) {
      if (j.contains(key)) j.at(key).get_to(field);
    };
    read("iterations", c.iterations);
    read("batch_size", c.batch_size);
    read("lr0", c.lr0);
    read("lr_final", c.lr_final);
    read("mixed_precision", c.mixed_precision);
    read("seed", c.seed);
    read("beta1", c.beta1);
    read("beta2", c.beta2);
    read("eps", c.eps);
    read("use_visual", c.use_visual);
    read("augment_prefixes", c.augment_prefixes);
    read("recipe", c.recipe);
    read("workers", c.workers);
    if (j.contains("image_size") && !j.at("image_size").is_null()) c.image_size = j.at("image_size").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

namespace {

nlohmann::json yaml_to_json(const YAML::Node& node) {
  switch (node.Type()) {
    case YAML::NodeType::Null:
    case YAML::NodeType::Undefined: return nullptr;
    case YAML::NodeType::Sequence: {
      nlohmann::json a = nlohmann::json::array();
      for (const auto& item : node) a.push_back(yaml_to_json(item));
      return a;
    }
    case YAML::NodeType::Map: {
      nlohmann::json o = nlohmann::json::object();
      for (const auto& kv : node) o[kv.first.as<std::string>()] = yaml_to_json(kv.second);
      return o;
    }
    case YAML::NodeType::Scalar: {
      const std::string s = node.Scalar();
      if (node.Tag() == "!") return s;  // quoted
      long long i;
      double d;
      bool b;
      if (YAML::convert<long long>::decode(node, i)) return i;
      if (YAML::convert<double>::decode(node, d)) return d;
      if (YAML::convert<bool>::decode(node, b)) return b;
      return s;
    }
  }
  return nullptr;
}

void reject_unknown(const nlohmann::json& j, const std::vector<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a mapping");
  for (const auto& [key, _] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw ConfigError("unknown field '" + key + "' in " + where);
    }
  }
}

}  // namespace

TrainJob train_job_from_yaml(const std::string& text) {
  nlohmann::json j;
  try {
    j = yaml_to_json(YAML::Load(text));
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("train job YAML: ") + e.what());
  }
  if (j.is_null()) j = nlohmann::json::object();
  reject_unknown(j, {"backbone", "decoder", "data", "train", "output"}, "train job");
  TrainJob job;
  if (j.contains("backbone")) {
    const auto& b = j["backbone"];
    reject_unknown(b, {"variant", "weights", "bpe"}, "backbone");
    job.backbone = b.value("variant", job.backbone);
    job.weights_path = b.value("weights", "");
    job.bpe_path = b.value("bpe", "");
  }
  if (j.contains("decoder")) {
    auto d = j["decoder"];
    job.decoder_preset = d.value("preset", job.decoder_preset);
    d.erase("preset");
    job.decoder_overrides = d;
  }
  if (j.contains("data")) {
    const auto& d = j["data"];
    reject_unknown(d, {"source", "q_neg"}, "data");
    job.data = d.value("source", "");
    job.q_neg = d.value("q_neg", job.q_neg);
  }
  if (j.contains("train")) job.train = train_config_from_json(j["train"]);
  if (j.contains("output")) {
    const auto& o = j["output"];
    reject_unknown(o, {"checkpoint", "loss_curve"}, "output");
    job.checkpoint = o.value("checkpoint", job.checkpoint);
    job.loss_curve = o.value("loss_curve", job.loss_curve);
  }
  return job;
}

TrainJob load_train_job(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return train_job_from_yaml(ss.str());
}

backbone::BackboneConfig backbone_config_for(const std::string& name, const std::string& weights_path,
                                             const std::string& bpe_path) {
  backbone::BackboneConfig c;
  if (name == "stand-in") {
    c = backbone::BackboneConfig::vit_b16();
    c.variant = backbone::Variant::StandInRandom;
  } else if (name == "tiny") {
    c = backbone::BackboneConfig::tiny();
  } else if (name == "imagenet-stand-in") {
    c = backbone::BackboneConfig::vit_b16();
    c.variant = backbone::Variant::ImagenetVitStandIn;
  } else if (name == "pretrained") {
    c = backbone::BackboneConfig::vit_b16();
    c.variant = backbone::Variant::PretrainedDualEncoder;
  } else {
    throw ConfigError("unknown backbone '" + name + "' (stand-in, tiny, imagenet-stand-in, pretrained)");
  }
  c.weights_path = weights_path;
  c.bpe_path = bpe_path;
  c.validate();
  return c;
}

decoder::DecoderConfig decoder_config_for(const std::string& preset, const backbone::BackboneConfig& b,
                                          const nlohmann::json& overrides) {
  decoder::DecoderConfig c;
  if (preset == "default") c = decoder::DecoderConfig::for_backbone(b);
  else if (preset == "tiny") c = decoder::DecoderConfig::tiny_for_backbone(b);
  else if (preset == "deconv") c = decoder::DecoderConfig::deconv_for_backbone(b);
  else throw ConfigError("unknown decoder preset '" + preset + "' (default, tiny, deconv)");
  if (overrides.is_null() || overrides.empty()) return c;
  nlohmann::json j = decoder::to_json(c);
  for (const auto& [key, value] : overrides.items()) {
    if (!j.contains(key) && key != "blocks") throw ConfigError("unknown decoder field '" + key + "'");
    j[key] = value;
  }
  return decoder::decoder_config_from_json(j);
}

double cosine_lr(int step, const TrainConfig& c) {
  if (step < 0 || step > c.iterations) {
    throw InputError("step " + std::to_string(step) + " outside [0, " + std::to_string(c.iterations) + "]");
  }
  if (step == c.iterations) return c.lr_final;
  const double progress = static_cast<double>(step) / static_cast<double>(c.iterations);
  return c.lr_final + (c.lr0 - c.lr_final) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

void TrainResult::write_csv(std::ostream& out) const {
  out << "step,lr,loss\n";
  out.precision(12);
  for (const auto& s : curve) out << s.step << ',' << s.lr << ',' << s.loss << '\n';
}

double bce_with_logits(const MatrixD& z, const Mask& target, MatrixD* d, double scale) {
  if (z.rows() != target.height || z.cols() != target.width) throw InputError("logits and target sizes differ");
  const double n = static_cast<double>(z.size());
  if (d) d->resize(z.rows(), z.cols());
  double loss = 0.0;
  for (int y = 0; y < target.height; ++y)
    for (int x = 0; x < target.width; ++x) {
      const double v = z(y, x);
      const double t = target.at(y, x);
      // log(1 + e^-|v|) + max(v, 0) - v t
      loss += std::max(v, 0.0) - v * t + std::log1p(std::exp(-std::abs(v)));
      if (d) (*d)(y, x) = scale * (1.0 / (1.0 + std::exp(-v)) - t) / n;
    }
  return loss / n;
}

struct Trainer::Prepared {
  std::string id;
  backbone::ActivationReadout readout;
  Mask target;
  std::string phrase;
  std::optional<VectorD> visual;
};

Trainer::Trainer(const backbone::Backbone& backbone, decoder::Decoder& decoder, TrainConfig config)
    : backbone_(backbone), decoder_(decoder), config_(std::move(config)), conditioner_(backbone) {
  config_.validate();
}

using detail::parallel_for;
using detail::worker_count;

TrainResult Trainer::train(const std::vector<datasets::SampleRecord>& records,
                           const std::function<void(const StepLog&)>& on_step) {
  if (records.empty()) throw InputError("training needs at least one record");
  TrainResult result;
  result.backbone_checksum_before = backbone_.parameter_checksum();

  const auto& layers = decoder_.config().readout_layers;
  std::vector<Prepared> data(records.size());
  const unsigned workers = worker_count(config_.workers, records.size());
  parallel_for(records.size(), workers, [&](std::size_t i, unsigned) {
    const auto& r = records[i];
    Image img = r.load_image();
    Mask mask = r.load_mask();
    if (config_.image_size) {
      img = resize_bilinear(img, *config_.image_size, *config_.image_size);
      mask = resize_nearest(mask, *config_.image_size, *config_.image_size);
    }
    Prepared p;
    p.id = r.id;
    p.readout = backbone_.encode_image(img, layers);
    p.target = std::move(mask);
    p.phrase = r.phrase;
    if (config_.use_visual && r.support && !r.negative) {
      p.visual = conditioner_.from_visual(r.load_support_image(), r.load_support_mask(), config_.recipe).values;
    }
    data[i] = std::move(p);
  });

  std::unordered_map<std::string, VectorD> text_cache;
  auto text_embedding = [&](const std::string& phrase) -> const VectorD& {
    auto it = text_cache.find(phrase);
    if (it == text_cache.end()) it = text_cache.emplace(phrase, backbone_.encode_text(phrase)).first;
    return it->second;
  };

  std::mt19937_64 rng(config_.seed);
  std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
  auto& params = decoder_.params();
  decoder::DecoderParams m = params.zeros_like(), v = params.zeros_like();
  std::vector<decoder::Matrix*> P, M, V;
  params.visit([&](const std::string&, decoder::Matrix& t) { P.push_back(&t); });
  m.visit([&](const std::string&, decoder::Matrix& t) { M.push_back(&t); });
  v.visit([&](const std::string&, decoder::Matrix& t) { V.push_back(&t); });

  const std::size_t B = static_cast<std::size_t>(config_.batch_size);
  const unsigned batch_workers = worker_count(config_.workers, B);
  for (int step = 0; step < config_.iterations; ++step) {
    std::vector<std::size_t> batch(B);
    std::vector<VectorD> conds(B);
    for (std::size_t b = 0; b < B; ++b) {
      batch[b] = pick(rng);
      const Prepared& p = data[batch[b]];
      const std::string phrase = config_.augment_prefixes ? datasets::augment_phrase(p.phrase, rng) : p.phrase;
      conditioning::ConditionalVector text{text_embedding(phrase), "text"};
      if (p.visual) {
        const double a = conditioning::sample_interpolation_weight(rng);
        conds[b] = conditioning::interpolate({*p.visual, "visual"}, text, a).values;
      } else {
        conds[b] = text.values;
      }
    }

    // contiguous chunks per worker, reduced in chunk order
    std::vector<decoder::DecoderParams> grads(batch_workers, params.zeros_like());
    std::vector<double> losses(B, 0.0);
    parallel_for(batch_workers, batch_workers, [&](std::size_t w, unsigned) {
      const std::size_t begin = B * w / batch_workers, end = B * (w + 1) / batch_workers;
      for (std::size_t b = begin; b < end; ++b) {
        const Prepared& p = data[batch[b]];
        decoder::Decoder::Tape tape;
        const auto logits = decoder_.forward(p.readout, conds[b], tape, config_.mixed_precision);
        MatrixD d;
        losses[b] = bce_with_logits(logits.values, p.target, &d, 1.0 / static_cast<double>(B));
        decoder_.backward(tape, d, grads[w]);
      }
    });
    double loss = 0.0;
    for (double l : losses) loss += l;
    loss /= static_cast<double>(B);
    if (!std::isfinite(loss)) {
      std::string ids;
      for (auto i : batch) ids += (ids.empty() ? "" : ", ") + data[i].id;
      throw NumericError("non-finite loss at step " + std::to_string(step) + " (batch records: " + ids + ")");
    }
    for (unsigned w = 1; w < batch_workers; ++w) {
      std::vector<decoder::Matrix*> G0, Gw;
      grads[0].visit([&](const std::string&, decoder::Matrix& t) { G0.push_back(&t); });
      grads[w].visit([&](const std::string&, decoder::Matrix& t) { Gw.push_back(&t); });
      for (std::size_t k = 0; k < G0.size(); ++k) *G0[k] += *Gw[k];
    }
    std::vector<decoder::Matrix*> G;
    grads[0].visit([&](const std::string&, decoder::Matrix& t) { G.push_back(&t); });

    const double lr = cosine_lr(step, config_);
    const double t = step + 1;
    const double c1 = 1.0 - std::pow(config_.beta1, t), c2 = 1.0 - std::pow(config_.beta2, t);
    for (std::size_t k = 0; k < P.size(); ++k) {
      auto& g = *G[k];
      *M[k] = config_.beta1 * *M[k] + (1.0 - config_.beta1) * g;
      *V[k] = config_.beta2 * *V[k] + (1.0 - config_.beta2) * g.cwiseProduct(g);
      if (lr == 0.0) continue;
      *P[k] -= (lr * (M[k]->array() / c1) / ((V[k]->array() / c2).sqrt() + config_.eps)).matrix();
    }

    StepLog log{step, lr, loss};
    result.curve.push_back(log);
    if (on_step) on_step(log);
  }
  result.backbone_checksum_after = backbone_.parameter_checksum();
  return result;
}

TrainResult run_train_job(const TrainJob& job, std::uint64_t decoder_seed) {
  if (job.data.empty()) throw ConfigError("train job has no data source");
  const auto bcfg = backbone_config_for(job.backbone, job.weights_path, job.bpe_path);
  const auto dcfg = decoder_config_for(job.decoder_preset, bcfg, job.decoder_overrides);
  backbone::Backbone bb(bcfg);
  decoder::Decoder dec(dcfg, decoder_seed ? decoder_seed : job.train.seed);
  auto records = datasets::load_records(job.data);
  std::mt19937_64 rng(job.train.seed);
  if (job.q_neg > 0.0) records = datasets::build_phrasecut_plus(records, job.q_neg, rng);
  Trainer trainer(bb, dec, job.train);
  const int every = std::max(1, job.train.iterations / 20);
  auto result = trainer.train(records, [&](const StepLog& s) {
    if (s.step % every == 0 || s.step + 1 == job.train.iterations) {
      spdlog::info("step {:>6}  lr {:.6f}  loss {:.5f}", s.step, s.lr, s.loss);
    }
  });
  nlohmann::json extra{{"train_config", to_json(job.train)},
                       {"steps", job.train.iterations},
                       {"data", job.data},
                       {"q_neg", job.q_neg},
                       {"final_loss", result.curve.empty() ? 0.0 : result.curve.back().loss}};
  if (job.train.image_size) extra["input_size"] = *job.train.image_size;
  for (const auto& out : {job.checkpoint, job.loss_curve}) {
    if (const auto parent = std::filesystem::path(out).parent_path(); !out.empty() && !parent.empty()) {
      std::filesystem::create_directories(parent);
    }
  }
  decoder::save_checkpoint(job.checkpoint, dec, bb, extra);
  if (!job.loss_curve.empty()) {
    std::ofstream out(job.loss_curve);
    result.write_csv(out);
  }
  return result;
}

}  // namespace promptseg::training
