#include <chrono>
#include <cstdlib>
#include <fstream>
#include <thread>

#include <gtest/gtest.h>

#include "promptseg/error.hpp"
#include "promptseg/service.hpp"
#include "promptseg/visual_prompts.hpp"
#include "support.hpp"

// after Eigen: resolv.h defines a _res macro
#include <httplib.h>

using namespace promptseg;
using namespace promptseg::service;

namespace {

const backbone::Backbone& tiny() {
  static const backbone::Backbone b(backbone::BackboneConfig::tiny());
  return b;
}

const Segmenter& model() {
  static const decoder::Decoder d(decoder::DecoderConfig::tiny_for_backbone(tiny().config()), 4);
  static const Segmenter s(tiny(), d);
  return s;
}

std::string png(const Image& image) {
  const auto b = encode_png(image);
  return {b.begin(), b.end()};
}

std::string png(const Mask& mask) {
  const auto b = encode_png(mask);
  return {b.begin(), b.end()};
}

std::multimap<std::string, Part> text_request(const std::string& text, int side = 40) {
  return {{"image", {png(fixtures::random_image(side, side, 3)), "q.png"}}, {"text", {text, ""}}};
}

Mask mask_from(const nlohmann::json& body) {
  const auto bytes = base64_decode(body.at("mask_png_base64").get<std::string>());
  return decode_mask(bytes);
}

}  // namespace

TEST(Base64, RoundTripsArbitraryBytes) {
  for (std::size_t n : {0u, 1u, 2u, 3u, 4u, 255u, 1000u}) {
    std::vector<std::uint8_t> bytes(n);
    for (std::size_t i = 0; i < n; ++i) bytes[i] = static_cast<std::uint8_t>(i * 37 + 11);
    EXPECT_EQ(base64_decode(base64_encode(bytes)), bytes);
  }
  EXPECT_EQ(base64_encode({'M', 'a', 'n'}), "TWFu");
  EXPECT_EQ(base64_encode({'M'}), "TQ==");
  EXPECT_THROW(base64_decode("@@@"), InputError);
  EXPECT_THROW(base64_decode("@@@@"), InputError);
}

TEST(Config, YamlAndEnvironmentOverrides) {
  const auto path = std::filesystem::temp_directory_path() / "promptseg_service.yaml";
  std::ofstream(path) << "checkpoint: a.pseg\nport: 9000\nmax_image_side: 512\n";
  ::setenv("PROMPTSEG_PORT", "9100", 1);
  const auto c = load_service_config(path);
  ::unsetenv("PROMPTSEG_PORT");
  EXPECT_EQ(c.checkpoint, "a.pseg");
  EXPECT_EQ(c.port, 9100);
  EXPECT_EQ(c.max_image_side, 512);
  std::ofstream(path) << "prot: 1\n";
  EXPECT_THROW(load_service_config(path), ConfigError);
  EXPECT_EQ(load_service_config(std::nullopt).port, 8080);
}

TEST(Segment, StatusCodes) {
  ServiceConfig cfg;
  cfg.max_image_side = 64;
  const Service svc(model(), "hash", cfg);
  EXPECT_EQ(svc.segment({{"text", {"red circle", ""}}}).status, 400);
  EXPECT_EQ(svc.segment({{"image", {"not a png", "x.png"}}, {"text", {"red circle", ""}}}).status, 400);
  auto bad_t = text_request("red circle");
  bad_t.emplace("threshold", Part{"1.5", ""});
  const auto r400 = svc.segment(bad_t);
  EXPECT_EQ(r400.status, 400);
  EXPECT_TRUE(r400.body.at("fields").contains("threshold"));
  auto half = text_request("red circle");
  half.emplace("support_image", Part{png(fixtures::random_image(32, 32, 1)), "s.png"});
  EXPECT_EQ(svc.segment(half).status, 400);
  EXPECT_EQ(svc.segment(text_request("red circle", 80)).status, 413);
  EXPECT_EQ(svc.segment({{"image", {png(fixtures::random_image(32, 32, 1)), "q.png"}}}).status, 422);
  std::multimap<std::string, Part> empty_support{{"image", {png(fixtures::random_image(32, 32, 1)), "q.png"}},
                                                 {"support_image", {png(fixtures::random_image(32, 32, 2)), "s.png"}},
                                                 {"support_mask", {png(Mask(32, 32)), "m.png"}}};
  EXPECT_EQ(svc.segment(empty_support).status, 422);

  const auto ok = svc.segment(text_request("red circle"));
  ASSERT_EQ(ok.status, 200);
  const Mask m = mask_from(ok.body);
  EXPECT_EQ(m.width, 40);
  EXPECT_EQ(ok.body.at("threshold"), 0.5);
}

TEST(Segment, InterpolatedRequestAndStatelessness) {
  const Service svc(model(), "hash", {});
  auto req = text_request("blue square");
  req.emplace("support_image", Part{png(fixtures::random_image(32, 32, 5)), "s.png"});
  req.emplace("support_mask", Part{png(fixtures::rect_mask(32, 32, 8, 8, 20, 20)), "m.png"});
  req.emplace("a", Part{"0.5", ""});
  const auto a = svc.segment(req);
  ASSERT_EQ(a.status, 200) << a.body.dump();
  const auto b = svc.segment(req);
  EXPECT_EQ(a.body.at("mask_png_base64"), b.body.at("mask_png_base64"));
  EXPECT_EQ(a.body.at("prob_map_png_base64"), b.body.at("prob_map_png_base64"));
}

TEST(Segment, ClientRethresholdingMatchesServer) {
  const Service svc(model(), "hash", {});
  for (double t : {0.2, 0.5, 0.51, 0.8}) {
    auto req = text_request("green triangle");
    req.emplace("threshold", Part{std::to_string(t), ""});
    const auto r = svc.segment(req);
    ASSERT_EQ(r.status, 200);
    int w = 0, h = 0;
    const auto q = decode_png16(base64_decode(r.body.at("prob_map_png_base64").get<std::string>()), w, h);
    EXPECT_EQ(threshold_quantized(q, w, h, t), mask_from(r.body));
  }
}

TEST(Http, HealthRecipesAndSegmentOverTheWire) {
  ServiceConfig cfg;
  cfg.port = 0;
  cfg.workers = 2;
  cfg.max_request_bytes = 1 << 20;
  Service svc(model(), "abc123", cfg);
  std::thread server([&] { svc.serve(); });
  for (int i = 0; i < 200 && !svc.running(); ++i) std::this_thread::sleep_for(std::chrono::milliseconds(10));
  ASSERT_TRUE(svc.running());
  httplib::Client client("127.0.0.1", svc.bound_port());

  const auto health = client.Get("/health");
  ASSERT_TRUE(health);
  EXPECT_EQ(health->status, 200);
  const auto hj = nlohmann::json::parse(health->body);
  EXPECT_EQ(hj.at("status"), "ok");
  EXPECT_EQ(hj.at("model_hash"), "abc123");

  const auto recipes = client.Get("/recipes");
  ASSERT_TRUE(recipes);
  const auto rj = nlohmann::json::parse(recipes->body);
  EXPECT_FALSE(rj.at("recipes").empty());

  httplib::MultipartFormDataItems items{{"image", png(fixtures::random_image(32, 32, 7)), "q.png", "image/png"},
                                        {"text", "red circle", "", ""}};
  const auto seg = client.Post("/segment", items);
  ASSERT_TRUE(seg);
  EXPECT_EQ(seg->status, 200);
  EXPECT_EQ(mask_from(nlohmann::json::parse(seg->body)).width, 32);

  const auto plain = client.Post("/segment", "x", "text/plain");
  ASSERT_TRUE(plain);
  EXPECT_EQ(plain->status, 400);

  const auto huge = client.Post("/segment", std::string(2 << 20, 'x'), "text/plain");
  ASSERT_TRUE(huge);
  EXPECT_EQ(huge->status, 413);

  svc.stop();
  server.join();
}
