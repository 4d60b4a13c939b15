#pragma once

#include <atomic>
#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "promptseg/pipeline.hpp"

namespace promptseg::service {

struct ServiceConfig {
  std::string checkpoint;
  std::string host = "127.0.0.1";
  int port = 8080;
  std::size_t max_request_bytes = 16u << 20;
  int max_image_side = 2048;
  unsigned workers = 4;
  std::size_t max_in_flight = 8;
  double default_threshold = 0.5;
  double default_interpolation = 0.5;
};

// YAML file (optional) then PROMPTSEG_CHECKPOINT / PROMPTSEG_PORT.
ServiceConfig load_service_config(const std::optional<std::filesystem::path>& yaml_path);

std::string base64_encode(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> base64_decode(const std::string& text);

struct Part {
  std::string content;
  std::string filename;
};

struct Response {
  int status = 200;
  nlohmann::json body;
};

// Request handling independent of the HTTP transport; stateless between
// calls and safe to call concurrently.
class Service {
 public:
  Service(const Segmenter& model, std::string model_hash, ServiceConfig config);

  Response health() const;
  Response recipes() const;
  // Parts: image (required), text, support_image, support_mask, recipe,
  // threshold, a.
  Response segment(const std::multimap<std::string, Part>& parts) const;

  // Blocks until stop(); returns false if the socket could not be bound.
  bool serve();
  void stop();
  // Port actually bound (useful with port 0).
  int bound_port() const { return bound_port_.load(); }
  bool running() const;

  const ServiceConfig& config() const { return config_; }

 private:
  struct Server;
  const Segmenter& model_;
  std::string model_hash_;
  ServiceConfig config_;
  std::shared_ptr<Server> server_;
  std::atomic<int> bound_port_{0};
  mutable std::atomic<std::size_t> in_flight_{0};
};

// One structured log line: {"time", "level", "event", ...fields}.
void log_event(const std::string& level, const std::string& event, const nlohmann::json& fields = {});

}  // namespace promptseg::service
