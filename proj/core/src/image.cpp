#include "promptseg/image.hpp"

#include <algorithm>
#include <cmath>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "image_cv.hpp"
#include "promptseg/error.hpp"

namespace promptseg {

Image::Image(int w, int h, float fill)
    : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, fill) {}

Mask::Mask(int w, int h, std::uint8_t fill)
    : width(w), height(h), bits(static_cast<std::size_t>(w) * h, fill) {}

std::size_t Mask::count() const {
  return static_cast<std::size_t>(std::count_if(bits.begin(), bits.end(), [](auto v) { return v != 0; }));
}

bool Mask::is_binary() const {
  return std::all_of(bits.begin(), bits.end(), [](auto v) { return v <= 1; });
}

namespace detail {

cv::Mat to_mat(const Image& image) {
  cv::Mat mat(image.height, image.width, CV_32FC3);
  std::copy(image.pixels.begin(), image.pixels.end(), mat.ptr<float>());
  return mat;
}

Image from_mat(const cv::Mat& mat) {
  cv::Mat f;
  if (mat.type() == CV_32FC3) {
    f = mat.isContinuous() ? mat : mat.clone();
  } else {
    mat.convertTo(f, CV_32FC3);
  }
  Image out(f.cols, f.rows);
  std::copy(f.ptr<float>(), f.ptr<float>() + out.pixels.size(), out.pixels.begin());
  return out;
}

cv::Mat to_mat(const Mask& mask) {
  cv::Mat mat(mask.height, mask.width, CV_8UC1);
  std::copy(mask.bits.begin(), mask.bits.end(), mat.ptr<std::uint8_t>());
  return mat;
}

Mask from_mat_mask(const cv::Mat& mat) {
  cv::Mat m = mat.isContinuous() ? mat : mat.clone();
  Mask out(m.cols, m.rows);
  const auto* p = m.ptr<std::uint8_t>();
  for (std::size_t i = 0; i < out.bits.size(); ++i) out.bits[i] = p[i] ? 1 : 0;
  return out;
}

}  // namespace detail

Box bounding_box(const Mask& mask) {
  Box box{mask.width, mask.height, -1, -1};
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      if (!mask.at(y, x)) continue;
      box.x0 = std::min(box.x0, x);
      box.y0 = std::min(box.y0, y);
      box.x1 = std::max(box.x1, x);
      box.y1 = std::max(box.y1, y);
    }
  }
  if (box.x1 < 0) throw DegenerateMaskError("mask has no foreground pixels");
  return box;
}

Image crop(const Image& image, const Box& box) {
  if (box.x0 < 0 || box.y0 < 0 || box.x1 >= image.width || box.y1 >= image.height || box.width() <= 0 ||
      box.height() <= 0) {
    throw InputError("crop box outside image bounds");
  }
  Image out(box.width(), box.height());
  for (int y = 0; y < out.height; ++y) {
    const auto* src = &image.pixels[image.index(box.y0 + y, box.x0)];
    std::copy(src, src + static_cast<std::size_t>(out.width) * 3, &out.pixels[out.index(y, 0)]);
  }
  return out;
}

Mask crop(const Mask& mask, const Box& box) {
  if (box.x0 < 0 || box.y0 < 0 || box.x1 >= mask.width || box.y1 >= mask.height || box.width() <= 0 ||
      box.height() <= 0) {
    throw InputError("crop box outside mask bounds");
  }
  Mask out(box.width(), box.height());
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x) out.at(y, x) = mask.at(box.y0 + y, box.x0 + x);
  return out;
}

Image resize_bilinear(const Image& image, int width, int height) {
  if (width <= 0 || height <= 0) throw InputError("resize target must be positive");
  if (width == image.width && height == image.height) return image;
  cv::Mat out;
  cv::resize(detail::to_mat(image), out, cv::Size(width, height), 0, 0, cv::INTER_LINEAR);
  return detail::from_mat(out);
}

Mask resize_nearest(const Mask& mask, int width, int height) {
  if (width <= 0 || height <= 0) throw InputError("resize target must be positive");
  if (width == mask.width && height == mask.height) return mask;
  cv::Mat out;
  cv::resize(detail::to_mat(mask), out, cv::Size(width, height), 0, 0, cv::INTER_NEAREST);
  return detail::from_mat_mask(out);
}

Mask mask_union(const Mask& a, const Mask& b) {
  if (a.width != b.width || a.height != b.height) throw InputError("mask size mismatch in union");
  Mask out(a.width, a.height);
  for (std::size_t i = 0; i < out.bits.size(); ++i) out.bits[i] = (a.bits[i] || b.bits[i]) ? 1 : 0;
  return out;
}

Mask mask_complement(const Mask& m) {
  Mask out(m.width, m.height);
  for (std::size_t i = 0; i < out.bits.size(); ++i) out.bits[i] = m.bits[i] ? 0 : 1;
  return out;
}

Mask downsample_to_grid(const Mask& mask, int patch) {
  if (patch <= 0 || mask.width % patch != 0 || mask.height % patch != 0) {
    throw SizingError("mask size " + std::to_string(mask.width) + "x" + std::to_string(mask.height) +
                      " is not divisible by patch size " + std::to_string(patch));
  }
  Mask grid(mask.width / patch, mask.height / patch);
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x)
      if (mask.at(y, x)) grid.at(y / patch, x / patch) = 1;
  return grid;
}

namespace {

cv::Mat rgb_to_bgr8(const Image& image) {
  cv::Mat f = detail::to_mat(image), bgr, u8;
  cv::cvtColor(f, bgr, cv::COLOR_RGB2BGR);
  bgr.convertTo(u8, CV_8UC3, 255.0);
  return u8;
}

Image bgr_to_image(const cv::Mat& raw) {
  cv::Mat bgr;
  if (raw.channels() == 1) {
    cv::cvtColor(raw, bgr, cv::COLOR_GRAY2BGR);
  } else if (raw.channels() == 4) {
    cv::cvtColor(raw, bgr, cv::COLOR_BGRA2BGR);
  } else {
    bgr = raw;
  }
  const double scale = bgr.depth() == CV_16U ? 1.0 / 65535.0 : 1.0 / 255.0;
  cv::Mat f, rgb;
  bgr.convertTo(f, CV_32FC3, scale);
  cv::cvtColor(f, rgb, cv::COLOR_BGR2RGB);
  return detail::from_mat(rgb);
}

Mask gray_to_mask(const cv::Mat& raw) {
  cv::Mat gray;
  if (raw.channels() == 3) {
    cv::cvtColor(raw, gray, cv::COLOR_BGR2GRAY);
  } else if (raw.channels() == 4) {
    cv::cvtColor(raw, gray, cv::COLOR_BGRA2GRAY);
  } else {
    gray = raw;
  }
  Mask out(gray.cols, gray.rows);
  for (int y = 0; y < gray.rows; ++y)
    for (int x = 0; x < gray.cols; ++x) {
      const bool on = gray.depth() == CV_16U ? gray.at<std::uint16_t>(y, x) != 0 : gray.at<std::uint8_t>(y, x) != 0;
      out.at(y, x) = on ? 1 : 0;
    }
  return out;
}

cv::Mat mask_to_u8(const Mask& mask) {
  cv::Mat m = detail::to_mat(mask);
  return m * 255;
}

std::vector<std::uint8_t> encode(const cv::Mat& mat) {
  std::vector<std::uint8_t> out;
  if (!cv::imencode(".png", mat, out)) throw FormatError("PNG encoding failed");
  return out;
}

cv::Mat decode(std::span<const std::uint8_t> bytes, int flags) {
  if (bytes.empty()) throw InputError("empty image payload");
  cv::Mat buf(1, static_cast<int>(bytes.size()), CV_8UC1, const_cast<std::uint8_t*>(bytes.data()));
  cv::Mat img = cv::imdecode(buf, flags);
  if (img.empty()) throw InputError("payload is not a decodable image");
  return img;
}

}  // namespace

Image load_image(const std::filesystem::path& path) {
  cv::Mat raw = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (raw.empty()) throw InputError("cannot read image: " + path.string());
  return bgr_to_image(raw);
}

void save_image(const Image& image, const std::filesystem::path& path) {
  if (!cv::imwrite(path.string(), rgb_to_bgr8(image))) throw FormatError("cannot write image: " + path.string());
}

Mask load_mask(const std::filesystem::path& path) {
  cv::Mat raw = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (raw.empty()) throw InputError("cannot read mask: " + path.string());
  return gray_to_mask(raw);
}

void save_mask(const Mask& mask, const std::filesystem::path& path) {
  if (!cv::imwrite(path.string(), mask_to_u8(mask))) throw FormatError("cannot write mask: " + path.string());
}

std::vector<std::uint8_t> encode_png(const Image& image) { return encode(rgb_to_bgr8(image)); }

std::vector<std::uint8_t> encode_png(const Mask& mask) { return encode(mask_to_u8(mask)); }

Image decode_image(std::span<const std::uint8_t> bytes) { return bgr_to_image(decode(bytes, cv::IMREAD_COLOR)); }

Mask decode_mask(std::span<const std::uint8_t> bytes) { return gray_to_mask(decode(bytes, cv::IMREAD_UNCHANGED)); }

std::uint16_t quantize16(double p) { return static_cast<std::uint16_t>(std::lround(std::clamp(p, 0.0, 1.0) * 65535.0)); }

Mask threshold_quantized(std::span<const std::uint16_t> q, int width, int height, double t) {
  if (q.size() != static_cast<std::size_t>(width) * height) throw InputError("quantized map size mismatch");
  Mask m(width, height, 0);
  for (std::size_t i = 0; i < q.size(); ++i) m.bits[i] = static_cast<double>(q[i]) / 65535.0 >= t ? 1 : 0;
  return m;
}

std::vector<std::uint8_t> encode_png16(std::span<const double> values, int width, int height) {
  if (values.size() != static_cast<std::size_t>(width) * height) throw InputError("probability map size mismatch");
  cv::Mat m(height, width, CV_16UC1);
  auto* p = m.ptr<std::uint16_t>();
  for (std::size_t i = 0; i < values.size(); ++i) p[i] = quantize16(values[i]);
  return encode(m);
}

std::vector<std::uint16_t> decode_png16(std::span<const std::uint8_t> bytes, int& width, int& height) {
  cv::Mat m = decode(bytes, cv::IMREAD_UNCHANGED);
  if (m.type() != CV_16UC1) throw InputError("expected a 16-bit single-channel PNG");
  width = m.cols;
  height = m.rows;
  std::vector<std::uint16_t> out(static_cast<std::size_t>(width) * height);
  std::copy(m.ptr<std::uint16_t>(), m.ptr<std::uint16_t>() + out.size(), out.begin());
  return out;
}

}  // namespace promptseg
