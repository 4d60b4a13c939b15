#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace promptseg {

struct Rgb {
  float r = 0.f;
  float g = 0.f;
  float b = 0.f;
};

// Interleaved RGB image, row-major, channel values in [0, 1].
struct Image {
  int width = 0;
  int height = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(int w, int h, float fill = 0.f);

  bool empty() const { return width == 0 || height == 0; }
  std::size_t index(int y, int x) const {
    return (static_cast<std::size_t>(y) * width + x) * 3;
  }
  float& at(int y, int x, int c) { return pixels[index(y, x) + c]; }
  float at(int y, int x, int c) const { return pixels[index(y, x) + c]; }

  friend bool operator==(const Image&, const Image&) = default;
};

// Binary mask; every entry is 0 or 1.
struct Mask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> bits;

  Mask() = default;
  Mask(int w, int h, std::uint8_t fill = 0);

  bool empty() const { return width == 0 || height == 0; }
  std::uint8_t& at(int y, int x) { return bits[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int y, int x) const { return bits[static_cast<std::size_t>(y) * width + x]; }

  std::size_t count() const;
  bool any() const { return count() > 0; }
  bool is_binary() const;

  friend bool operator==(const Mask&, const Mask&) = default;
};

// Inclusive pixel rectangle.
struct Box {
  int x0 = 0;
  int y0 = 0;
  int x1 = -1;
  int y1 = -1;

  int width() const { return x1 - x0 + 1; }
  int height() const { return y1 - y0 + 1; }
  friend bool operator==(const Box&, const Box&) = default;
};

// Tight bounding box of the foreground; throws DegenerateMaskError when empty.
Box bounding_box(const Mask& mask);

Image crop(const Image& image, const Box& box);
Mask crop(const Mask& mask, const Box& box);

Image resize_bilinear(const Image& image, int width, int height);
Mask resize_nearest(const Mask& mask, int width, int height);

Mask mask_union(const Mask& a, const Mask& b);
Mask mask_complement(const Mask& m);

// Pixel-wise OR over each patch; result is (height/patch) x (width/patch).
Mask downsample_to_grid(const Mask& mask, int patch);

Image load_image(const std::filesystem::path& path);
void save_image(const Image& image, const std::filesystem::path& path);
// Any non-zero pixel of a single-channel (or first channel) PNG is foreground.
Mask load_mask(const std::filesystem::path& path);
// Single-channel 8-bit PNG, values 0/255.
void save_mask(const Mask& mask, const std::filesystem::path& path);

std::vector<std::uint8_t> encode_png(const Image& image);
std::vector<std::uint8_t> encode_png(const Mask& mask);
Image decode_image(std::span<const std::uint8_t> bytes);
Mask decode_mask(std::span<const std::uint8_t> bytes);

// round(clamp(p, 0, 1) * 65535)
std::uint16_t quantize16(double p);
// The one thresholding rule for quantized maps: q / 65535 >= t.
Mask threshold_quantized(std::span<const std::uint16_t> q, int width, int height, double t);

// 16-bit grayscale PNG of quantize16 values.
std::vector<std::uint8_t> encode_png16(std::span<const double> values, int width, int height);
std::vector<std::uint16_t> decode_png16(std::span<const std::uint8_t> bytes, int& width, int& height);

}  // namespace promptseg
