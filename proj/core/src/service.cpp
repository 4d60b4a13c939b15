#include "promptseg/service.hpp"

#include <chrono>
#include <cstdlib>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <sstream>

#include <httplib.h>
#include <openssl/evp.h>
#include <yaml-cpp/yaml.h>

#include "promptseg/error.hpp"

namespace promptseg::service {

ServiceConfig load_service_config(const std::optional<std::filesystem::path>& yaml_path) {
  ServiceConfig c;
  if (yaml_path) {
    try {
      const YAML::Node n = YAML::LoadFile(yaml_path->string());
      for (const auto& kv : n) {
        const auto key = kv.first.as<std::string>();
        const auto& v = kv.second;
        if (key == "checkpoint") c.checkpoint = v.as<std::string>();
        else if (key == "host") c.host = v.as<std::string>();
        else if (key == "port") c.port = v.as<int>();
        else if (key == "max_request_bytes") c.max_request_bytes = v.as<std::size_t>();
        else if (key == "max_image_side") c.max_image_side = v.as<int>();
        else if (key == "workers") c.workers = v.as<unsigned>();
        else if (key == "max_in_flight") c.max_in_flight = v.as<std::size_t>();
        else if (key == "default_threshold") c.default_threshold = v.as<double>();
        else if (key == "default_interpolation") c.default_interpolation = v.as<double>();
        else throw ConfigError("unknown service field '" + key + "'");
      }
    } catch (const YAML::Exception& e) {
      throw ConfigError(yaml_path->string() + ": " + e.what());
    }
  }
  if (const char* ckpt = std::getenv("PROMPTSEG_CHECKPOINT"); ckpt && *ckpt) c.checkpoint = ckpt;
  if (const char* port = std::getenv("PROMPTSEG_PORT"); port && *port) {
    try {
      c.port = std::stoi(port);
    } catch (const std::exception&) {
      throw ConfigError(std::string("PROMPTSEG_PORT is not a port number: ") + port);
    }
  }
  if (c.workers == 0 || c.max_in_flight == 0) throw ConfigError("workers and max_in_flight must be positive");
  return c;
}

std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(), static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::vector<std::uint8_t> base64_decode(const std::string& text) {
  if (text.size() % 4 != 0) throw InputError("base64 length is not a multiple of 4");
  std::vector<std::uint8_t> out(3 * text.size() / 4);
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()), static_cast<int>(text.size()));
  if (n < 0) throw InputError("invalid base64");
  std::size_t size = static_cast<std::size_t>(n);
  for (auto it = text.rbegin(); it != text.rend() && *it == '='; ++it) --size;
  out.resize(size);
  return out;
}

void log_event(const std::string& level, const std::string& event, const nlohmann::json& fields) {
  static std::mutex mu;
  const auto now = std::chrono::system_clock::now();
  const auto t = std::chrono::system_clock::to_time_t(now);
  std::ostringstream ts;
  ts << std::put_time(std::gmtime(&t), "%FT%TZ");
  nlohmann::json line{{"time", ts.str()}, {"level", level}, {"event", event}};
  if (fields.is_object()) line.update(fields);
  std::lock_guard lock(mu);
  std::cerr << line.dump() << '\n';
}

struct Service::Server {
  httplib::Server http;
};

Service::Service(const Segmenter& model, std::string model_hash, ServiceConfig config)
    : model_(model), model_hash_(std::move(model_hash)), config_(std::move(config)) {}

Response Service::health() const { return {200, {{"status", "ok"}, {"model_hash", model_hash_}}}; }

Response Service::recipes() const {
  const auto& registry = model_.conditioner().registry();
  nlohmann::json list = nlohmann::json::array();
  for (const auto& id : registry.ids()) list.push_back({{"id", id}, {"label", registry.label(id)}});
  return {200, {{"recipes", list}}};
}

namespace {

Response error_response(int status, const std::string& message, const nlohmann::json& fields = nlohmann::json::object()) {
  return {status, {{"error", message}, {"fields", fields}}};
}

std::span<const std::uint8_t> bytes_of(const std::string& s) {
  return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
}

}  // namespace

Response Service::segment(const std::multimap<std::string, Part>& parts) const {
  struct Guard {
    std::atomic<std::size_t>& n;
    ~Guard() { --n; }
  };
  if (++in_flight_ > config_.max_in_flight) {
    --in_flight_;
    return error_response(503, "server busy, retry later");
  }
  Guard guard{in_flight_};

  const auto start = std::chrono::steady_clock::now();
  const auto field = [&](const std::string& k) -> const Part* {
    const auto it = parts.find(k);
    return it == parts.end() ? nullptr : &it->second;
  };

  nlohmann::json diagnostics = nlohmann::json::object();
  const Part* image_part = field("image");
  if (!image_part || image_part->content.empty()) diagnostics["image"] = "required image file is missing";
  const Part* text = field("text");
  const Part* support_image = field("support_image");
  const Part* support_mask = field("support_mask");
  if (static_cast<bool>(support_image) != static_cast<bool>(support_mask)) {
    diagnostics[support_image ? "support_mask" : "support_image"] = "support needs both support_image and support_mask";
  }
  double threshold = config_.default_threshold;
  if (const Part* t = field("threshold")) {
    try {
      threshold = std::stod(t->content);
      if (!(threshold > 0.0 && threshold < 1.0)) diagnostics["threshold"] = "must lie in (0, 1)";
    } catch (const std::exception&) {
      diagnostics["threshold"] = "not a number";
    }
  }
  std::optional<double> a;
  if (const Part* ap = field("a")) {
    try {
      a = std::stod(ap->content);
      if (!(*a >= 0.0 && *a <= 1.0)) diagnostics["a"] = "must lie in [0, 1]";
    } catch (const std::exception&) {
      diagnostics["a"] = "not a number";
    }
  }
  if (!diagnostics.empty()) return error_response(400, "malformed request", diagnostics);

  const bool has_text = text && !text->content.empty();
  if (!has_text && !support_image) {
    return error_response(422, "prompt missing: send `text` or `support_image` + `support_mask`");
  }

  Image image;
  try {
    image = decode_image(bytes_of(image_part->content));
  } catch (const Error& e) {
    return error_response(400, "image is not a decodable PNG/JPEG", {{"image", e.what()}});
  }
  if (image.width > config_.max_image_side || image.height > config_.max_image_side) {
    return error_response(413, "image exceeds " + std::to_string(config_.max_image_side) + " pixels per side");
  }

  conditioning::PromptSpec spec;
  try {
    if (support_image) {
      Image simg = decode_image(bytes_of(support_image->content));
      Mask smask = decode_mask(bytes_of(support_mask->content));
      const std::string recipe = field("recipe") ? field("recipe")->content : prompts::RecipeRegistry::kBestRecipe;
      spec = has_text ? conditioning::PromptSpec::interpolated(text->content, std::move(simg), std::move(smask),
                                                              a.value_or(config_.default_interpolation), recipe)
                      : conditioning::PromptSpec::from_support(std::move(simg), std::move(smask), recipe);
    } else {
      spec = conditioning::PromptSpec::from_text(text->content);
    }
  } catch (const Error& e) {
    return error_response(400, "support could not be decoded", {{"support", e.what()}});
  }

  MatrixD p;
  try {
    p = model_.probabilities(image, spec);
  } catch (const DegenerateMaskError& e) {
    return error_response(422, e.what(), {{"support_mask", "empty mask"}});
  } catch (const InputError& e) {
    return error_response(400, e.what());
  } catch (const ConfigError& e) {
    return error_response(400, e.what());
  }

  std::vector<std::uint16_t> q(static_cast<std::size_t>(p.size()));
  for (Eigen::Index i = 0; i < p.size(); ++i) q[static_cast<std::size_t>(i)] = quantize16(p.data()[i]);
  const Mask mask = threshold_quantized(q, image.width, image.height, threshold);
  const auto prob_png = encode_png16(std::span<const double>(p.data(), static_cast<std::size_t>(p.size())),
                                     image.width, image.height);
  const auto mask_png = encode_png(mask);
  const double latency =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return {200,
          {{"mask_png_base64", base64_encode(mask_png)},
           {"prob_map_png_base64", base64_encode(prob_png)},
           {"threshold", threshold},
           {"latency_ms", latency},
           {"width", image.width},
           {"height", image.height},
           {"prompt", spec.summary()},
           {"quantization", "q = round(p * 65535); mask = q / 65535 >= threshold"}}};
}

bool Service::serve() {
  server_ = std::make_shared<Server>();
  auto& http = server_->http;
  const unsigned workers = config_.workers;
  http.new_task_queue = [workers] { return new httplib::ThreadPool(workers); };
  http.set_payload_max_length(config_.max_request_bytes);

  auto reply = [](httplib::Response& res, const Response& r) {
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
  };
  http.Get("/health", [&, reply](const httplib::Request&, httplib::Response& res) { reply(res, health()); });
  http.Get("/recipes", [&, reply](const httplib::Request&, httplib::Response& res) { reply(res, recipes()); });
  http.Post("/segment", [&, reply](const httplib::Request& req, httplib::Response& res) {
    if (!req.is_multipart_form_data()) {
      reply(res, error_response(400, "expected multipart/form-data", {{"content_type", req.get_header_value("Content-Type")}}));
      return;
    }
    std::multimap<std::string, Part> parts;
    for (const auto& [name, f] : req.files) parts.emplace(name, Part{f.content, f.filename});
    const Response r = segment(parts);
    reply(res, r);
    log_event(r.status == 200 ? "info" : "warn", "segment",
              {{"status", r.status}, {"latency_ms", r.body.value("latency_ms", 0.0)}});
  });
  http.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (res.status == 413) {
      res.set_content(nlohmann::json{{"error", "request too large"}}.dump(), "application/json");
    }
  });

  int port = config_.port;
  if (port == 0) {
    port = http.bind_to_any_port(config_.host);
    if (port < 0) return false;
  } else if (!http.bind_to_port(config_.host, port)) {
    return false;
  }
  bound_port_ = port;
  log_event("info", "listening", {{"host", config_.host}, {"port", port}, {"model_hash", model_hash_}});
  return http.listen_after_bind();
}

void Service::stop() {
  if (server_) server_->http.stop();
}

bool Service::running() const { return server_ && server_->http.is_running(); }

}  // namespace promptseg::service
