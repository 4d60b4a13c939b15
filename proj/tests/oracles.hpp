#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <utility>
#include <vector>

#include "promptseg/image.hpp"
#include "promptseg/tensor.hpp"

namespace promptseg::fixtures {

// Exact pixel-level AP by sorting all scores: area under the step
// precision-recall curve, tied scores entering as one group.
inline double exact_average_precision(const std::vector<std::pair<MatrixD, Mask>>& stream) {
  std::vector<std::pair<double, bool>> px;
  for (const auto& [p, g] : stream) {
    for (int y = 0; y < g.height; ++y)
      for (int x = 0; x < g.width; ++x) px.emplace_back(p(y, x), g.at(y, x) != 0);
  }
  std::sort(px.begin(), px.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  const double positives = static_cast<double>(std::count_if(px.begin(), px.end(), [](const auto& v) { return v.second; }));
  if (positives == 0) return 0.0;
  double tp = 0, seen = 0, ap = 0, prev_recall = 0;
  for (std::size_t i = 0; i < px.size();) {
    std::size_t j = i;
    for (; j < px.size() && px[j].first == px[i].first; ++j) {
      seen += 1;
      tp += px[j].second ? 1 : 0;
    }
    const double recall = tp / positives;
    ap += (recall - prev_recall) * (tp / seen);
    prev_recall = recall;
    i = j;
  }
  return ap;
}

// Continuous-score instance: uniform noise or sigmoid of Gaussian logits
// separated by `sep` between classes.
inline std::pair<MatrixD, Mask> random_ap_instance(std::mt19937_64& rng, int size = 32) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> n(0.0, 1.5);
  const bool gaussian = u(rng) < 0.5;
  const double sep = 2.0 * u(rng);
  const double prevalence = 0.05 + 0.5 * u(rng);
  MatrixD p(size, size);
  Mask g(size, size, 0);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const bool pos = u(rng) < prevalence;
      g.at(y, x) = pos ? 1 : 0;
      p(y, x) = gaussian ? 1.0 / (1.0 + std::exp(-(n(rng) + (pos ? sep : -sep) / 2))) : u(rng);
    }
  }
  return {std::move(p), std::move(g)};
}

}  // namespace promptseg::fixtures
