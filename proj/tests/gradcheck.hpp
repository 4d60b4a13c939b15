#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "promptseg/decoder/decoder.hpp"
#include "support.hpp"

namespace promptseg::fixtures {

// D=16, 8x8 patches, three readouts on a 3x3 token grid.
inline decoder::DecoderConfig gradcheck_config() {
  decoder::DecoderConfig c;
  c.token_dim = 16;
  c.heads = 2;
  c.mlp_hidden = 32;
  c.patch_size = 8;
  c.vision_width = 24;
  c.embed_dim = 12;
  c.readout_layers = {0, 1, 2};
  return c;
}

inline backbone::ActivationReadout random_readout(const decoder::DecoderConfig& c, backbone::GridSize grid,
                                                  std::uint64_t seed) {
  backbone::ActivationReadout r;
  r.layers = c.readout_layers;
  r.grid = grid;
  for (std::size_t i = 0; i < c.readout_layers.size(); ++i) {
    r.tokens.push_back(random_matrix(grid.tokens(), c.vision_width, seed + i));
  }
  return r;
}

struct GradCheckEntry {
  std::string name;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckResult {
  std::vector<GradCheckEntry> params;
  std::vector<GradCheckEntry> condition;
  double max_rel_error() const {
    double m = 0.0;
    for (const auto* list : {&params, &condition})
      for (const auto& e : *list) m = std::max(m, e.rel_error);
    return m;
  }
};

// Magnitudes below the floor are central-difference roundoff (key biases,
// for one, have an exactly zero gradient).
inline constexpr double kGradientFloor = 1e-6;

inline double relative_error(double a, double n) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), kGradientFloor});
}

// Loss = sum(W .* logits) for a fixed random W; compares backward() against
// central differences for `n_params` random parameter entries and every
// entry of the condition.
inline GradCheckResult run_gradcheck(const decoder::DecoderConfig& config, std::size_t n_params, std::uint64_t seed,
                                     double h = 1e-5) {
  decoder::Decoder dec(config, seed);
  const backbone::GridSize grid{3, 3};
  const auto readout = random_readout(config, grid, seed + 100);
  const VectorD cond = random_matrix(config.embed_dim, 1, seed + 200).col(0);
  const MatrixD w = random_matrix(grid.rows * config.patch_size, grid.cols * config.patch_size, seed + 300);

  const auto loss = [&](const decoder::Decoder& d, const VectorD& c) {
    return (d.forward(readout, c).values.array() * w.array()).sum();
  };

  decoder::Decoder::Tape tape;
  dec.forward(readout, cond, tape);
  auto grads = dec.params().zeros_like();
  const VectorD d_cond = dec.backward(tape, w, grads);

  std::vector<std::pair<std::string, MatrixD*>> tensors;
  std::vector<const MatrixD*> grad_tensors;
  dec.params().visit([&](const std::string& name, MatrixD& m) { tensors.emplace_back(name, &m); });
  grads.visit([&](const std::string&, MatrixD& m) { grad_tensors.push_back(&m); });

  std::mt19937_64 rng(seed + 400);
  GradCheckResult out;
  for (std::size_t k = 0; k < n_params; ++k) {
    std::uniform_int_distribution<std::size_t> pick_tensor(0, tensors.size() - 1);
    const std::size_t t = pick_tensor(rng);
    MatrixD& m = *tensors[t].second;
    std::uniform_int_distribution<long> pick_entry(0, m.size() - 1);
    const long i = pick_entry(rng);
    const double saved = m.data()[i];
    m.data()[i] = saved + h;
    const double up = loss(dec, cond);
    m.data()[i] = saved - h;
    const double down = loss(dec, cond);
    m.data()[i] = saved;
    const double numeric = (up - down) / (2 * h);
    const double analytic = grad_tensors[t]->data()[i];
    out.params.push_back({tensors[t].first + "[" + std::to_string(i) + "]", analytic, numeric,
                          relative_error(analytic, numeric)});
  }
  for (Eigen::Index i = 0; i < cond.size(); ++i) {
    VectorD c = cond;
    c[i] += h;
    const double up = loss(dec, c);
    c[i] -= 2 * h;
    const double down = loss(dec, c);
    const double numeric = (up - down) / (2 * h);
    out.condition.push_back({"condition[" + std::to_string(i) + "]", d_cond[i], numeric, relative_error(d_cond[i], numeric)});
  }
  return out;
}

}  // namespace promptseg::fixtures
