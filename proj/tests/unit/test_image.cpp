#include <gtest/gtest.h>

#include "promptseg/error.hpp"
#include "promptseg/image.hpp"
#include "support.hpp"

using namespace promptseg;
using promptseg::fixtures::random_image;
using promptseg::fixtures::rect_mask;

TEST(Image, BoundingBoxIsTight) {
  const Mask m = rect_mask(20, 10, 3, 2, 7, 8);
  EXPECT_EQ(bounding_box(m), (Box{3, 2, 7, 8}));
  EXPECT_THROW(bounding_box(Mask(4, 4, 0)), DegenerateMaskError);
}

TEST(Image, CropCopiesWindow) {
  const Image img = random_image(16, 12, 1);
  const Box b{2, 3, 9, 7};
  const Image c = crop(img, b);
  ASSERT_EQ(c.width, 8);
  ASSERT_EQ(c.height, 5);
  for (int y = 0; y < c.height; ++y)
    for (int x = 0; x < c.width; ++x)
      for (int ch = 0; ch < 3; ++ch) EXPECT_EQ(c.at(y, x, ch), img.at(y + 3, x + 2, ch));
}

TEST(Image, UnionAndComplement) {
  const Mask a = rect_mask(8, 8, 0, 0, 3, 3);
  const Mask b = rect_mask(8, 8, 2, 2, 5, 5);
  EXPECT_EQ(mask_union(a, b).count(), 16u + 16u - 4u);
  EXPECT_EQ(mask_complement(a).count(), 64u - 16u);
  EXPECT_EQ(mask_complement(mask_complement(a)), a);
}

TEST(Image, DownsampleIsPatchwiseOr) {
  Mask m(8, 8, 0);
  m.at(5, 1) = 1;
  const Mask g = downsample_to_grid(m, 4);
  ASSERT_EQ(g.width, 2);
  EXPECT_EQ(g.at(1, 0), 1);
  EXPECT_EQ(g.count(), 1u);
}

TEST(Image, ResizeIdentityAndNearestMask) {
  const Image img = random_image(10, 7, 2);
  EXPECT_EQ(resize_bilinear(img, 10, 7), img);
  const Mask m = rect_mask(4, 4, 0, 0, 1, 1);
  const Mask up = resize_nearest(m, 8, 8);
  EXPECT_EQ(up.count(), 16u);
  EXPECT_TRUE(up.is_binary());
}

TEST(Image, PngRoundTrip) {
  const Mask m = rect_mask(9, 5, 1, 1, 4, 3);
  EXPECT_EQ(decode_mask(encode_png(m)), m);
  Image img(6, 4);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<float>(i % 256) / 255.f;
  const Image back = decode_image(encode_png(img));
  ASSERT_EQ(back.width, 6);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) EXPECT_NEAR(back.pixels[i], img.pixels[i], 1e-6);
}

TEST(Image, DecodeRejectsGarbage) {
  const std::vector<std::uint8_t> junk{1, 2, 3, 4};
  EXPECT_THROW(decode_image(junk), InputError);
}

TEST(Image, Quantize16ClampsAndRounds) {
  EXPECT_EQ(quantize16(-0.5), 0);
  EXPECT_EQ(quantize16(0.0), 0);
  EXPECT_EQ(quantize16(1.0), 65535);
  EXPECT_EQ(quantize16(2.0), 65535);
  EXPECT_EQ(quantize16(0.5), 32768);
  for (double p : {0.1, 0.3337, 0.999}) EXPECT_LE(std::abs(quantize16(p) / 65535.0 - p), 0.5 / 65535.0 + 1e-15);
}

TEST(Image, Png16RoundTripMatchesServerThreshold) {
  const std::vector<double> p{0.0, 0.2, 0.49999, 0.5, 0.73, 1.0};
  const auto png = encode_png16(p, 3, 2);
  int w = 0, h = 0;
  const auto q = decode_png16(png, w, h);
  ASSERT_EQ(w, 3);
  ASSERT_EQ(h, 2);
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_EQ(q[i], quantize16(p[i]));
  for (double t : {0.1, 0.5, 0.73, 0.9}) {
    std::vector<std::uint16_t> direct;
    for (double v : p) direct.push_back(quantize16(v));
    EXPECT_EQ(threshold_quantized(q, 3, 2, t), threshold_quantized(direct, 3, 2, t));
  }
}
