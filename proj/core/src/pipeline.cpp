#include "promptseg/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <span>

#include <opencv2/imgproc.hpp>

#include "promptseg/error.hpp"
#include "promptseg/hashing.hpp"

namespace promptseg {

std::pair<int, int> patch_aligned_size(int width, int height, int patch) {
  if (width <= 0 || height <= 0) throw SizingError("empty image");
  return {std::max(patch, width / patch * patch), std::max(patch, height / patch * patch)};
}

MatrixD resize_map(const MatrixD& values, int width, int height) {
  if (values.cols() == width && values.rows() == height) return values;
  cv::Mat src(static_cast<int>(values.rows()), static_cast<int>(values.cols()), CV_64F,
              const_cast<double*>(values.data()));
  cv::Mat dst;
  cv::resize(src, dst, cv::Size(width, height), 0, 0, cv::INTER_LINEAR);
  MatrixD out(height, width);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) out(y, x) = dst.at<double>(y, x);
  return out;
}

Segmenter::Segmenter(const backbone::Backbone& backbone, const decoder::Decoder& decoder)
    : backbone_(backbone), decoder_(decoder), conditioner_(backbone) {
  if (decoder.config().patch_size != backbone.config().patch_size ||
      decoder.config().vision_width != backbone.config().vision_width ||
      decoder.config().embed_dim != backbone.config().embed_dim) {
    throw ConfigError("decoder geometry does not match the backbone");
  }
}

decoder::SegmentationLogits Segmenter::logits(const Image& image, const conditioning::ConditionalVector& c) const {
  const auto readout = backbone_.encode_image(image, decoder_.config().readout_layers);
  return decoder_.forward(readout, c.values);
}

conditioning::ConditionalVector Segmenter::condition(const conditioning::PromptSpec& spec) const {
  return conditioner_.condition(spec);
}

MatrixD Segmenter::probabilities(const Image& image, const conditioning::ConditionalVector& c) const {
  return probabilities(image, std::vector<conditioning::ConditionalVector>{c}).front();
}

std::vector<MatrixD> Segmenter::probabilities(const Image& image,
                                              const std::vector<conditioning::ConditionalVector>& cs) const {
  const int patch = backbone_.config().patch_size;
  auto [w, h] = input_size_ ? std::pair{*input_size_, *input_size_} : patch_aligned_size(image.width, image.height, patch);
  const Image input = resize_bilinear(image, w, h);
  const auto readout = backbone_.encode_image(input, decoder_.config().readout_layers);
  std::vector<MatrixD> out;
  out.reserve(cs.size());
  for (const auto& c : cs) {
    const MatrixD z = decoder_.forward(readout, c.values).values;
    out.push_back(resize_map(z.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); }), image.width,
                             image.height));
  }
  return out;
}

MatrixD Segmenter::probabilities(const Image& image, const conditioning::PromptSpec& spec) const {
  return probabilities(image, condition(spec));
}

LoadedModel load_model(const std::filesystem::path& path) {
  auto ckpt = decoder::load_checkpoint(path);
  LoadedModel m;
  m.backbone = std::make_unique<backbone::Backbone>(backbone::config_from_json(ckpt.backbone_metadata));
  decoder::verify_backbone(ckpt, *m.backbone);
  m.decoder = std::make_unique<decoder::Decoder>(std::move(ckpt.decoder));
  m.segmenter = std::make_unique<Segmenter>(*m.backbone, *m.decoder);
  if (ckpt.extra.contains("input_size") && ckpt.extra["input_size"].is_number_integer()) {
    m.segmenter->set_input_size(ckpt.extra["input_size"].get<int>());
  }
  m.extra = ckpt.extra;
  Fnv1a h;
  h.update(m.decoder->config().hash());
  h.update(ckpt.backbone_hash);
  m.decoder->params().visit([&](const std::string&, const decoder::Matrix& t) {
    h.update_values(std::span<const double>(t.data(), static_cast<std::size_t>(t.size())));
  });
  m.model_hash = h.hex();
  return m;
}

}  // namespace promptseg
