#include <random>

#include <benchmark/benchmark.h>

#include "promptseg/decoder/decoder.hpp"

using namespace promptseg;

namespace {

backbone::ActivationReadout readout(const decoder::DecoderConfig& c, int grid) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n;
  backbone::ActivationReadout r;
  r.grid = {grid, grid};
  r.layers = c.readout_layers;
  for (std::size_t i = 0; i < c.readout_layers.size(); ++i) {
    MatrixD t(1 + grid * grid, c.vision_width);
    for (Eigen::Index k = 0; k < t.size(); ++k) t(k) = n(rng);
    r.tokens.push_back(std::move(t));
  }
  return r;
}

void BM_DecoderForward(benchmark::State& state) {
  const auto c = decoder::DecoderConfig::for_backbone(backbone::BackboneConfig::vit_b16());
  const decoder::Decoder dec(c, 1);
  const auto r = readout(c, static_cast<int>(state.range(0)));
  const VectorD cond = VectorD::Ones(c.embed_dim);
  for (auto _ : state) benchmark::DoNotOptimize(dec.forward(r, cond));
}
BENCHMARK(BM_DecoderForward)->Arg(14)->Arg(22)->Unit(benchmark::kMillisecond);

void BM_DecoderForwardBackward(benchmark::State& state) {
  const auto c = decoder::DecoderConfig::for_backbone(backbone::BackboneConfig::vit_b16());
  const decoder::Decoder dec(c, 1);
  const auto r = readout(c, 14);
  const VectorD cond = VectorD::Ones(c.embed_dim);
  auto grads = dec.params().zeros_like();
  for (auto _ : state) {
    decoder::Decoder::Tape tape;
    const auto out = dec.forward(r, cond, tape, state.range(0) != 0);
    dec.backward(tape, decoder::Matrix::Ones(out.height, out.width), grads);
  }
}
BENCHMARK(BM_DecoderForwardBackward)->Arg(0)->Arg(1)->ArgName("mixed")->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
