#pragma once

#include <random>

#include "promptseg/image.hpp"
#include "promptseg/tensor.hpp"

namespace promptseg::fixtures {

inline Image random_image(int w, int h, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.f, 1.f);
  Image img(w, h);
  for (auto& v : img.pixels) v = u(rng);
  return img;
}

inline Mask rect_mask(int w, int h, int x0, int y0, int x1, int y1) {
  Mask m(w, h, 0);
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) m.at(y, x) = 1;
  return m;
}

inline Mask random_mask(int w, int h, double p, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution b(p);
  Mask m(w, h, 0);
  for (auto& v : m.bits) v = b(rng) ? 1 : 0;
  return m;
}

inline MatrixD random_matrix(long rows, long cols, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  MatrixD m(rows, cols);
  for (long i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

}  // namespace promptseg::fixtures
