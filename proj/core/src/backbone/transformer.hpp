#pragma once

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "promptseg/tensor.hpp"

namespace promptseg::backbone::detail {

// Weights of one pre-norm residual attention block. Linear weights are stored
// out x in, biases and norm parameters as 1 x n rows.
struct ResidualBlock {
  MatrixF ln1_weight, ln1_bias;
  MatrixF in_proj_weight, in_proj_bias;
  MatrixF out_proj_weight, out_proj_bias;
  MatrixF ln2_weight, ln2_bias;
  MatrixF fc_weight, fc_bias;
  MatrixF proj_weight, proj_bias;

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + "ln_1.weight", ln1_weight);
    f(prefix + "ln_1.bias", ln1_bias);
    f(prefix + "attn.in_proj_weight", in_proj_weight);
    f(prefix + "attn.in_proj_bias", in_proj_bias);
    f(prefix + "attn.out_proj.weight", out_proj_weight);
    f(prefix + "attn.out_proj.bias", out_proj_bias);
    f(prefix + "ln_2.weight", ln2_weight);
    f(prefix + "ln_2.bias", ln2_bias);
    f(prefix + "mlp.c_fc.weight", fc_weight);
    f(prefix + "mlp.c_fc.bias", fc_bias);
    f(prefix + "mlp.c_proj.weight", proj_weight);
    f(prefix + "mlp.c_proj.bias", proj_bias);
  }
};

ResidualBlock make_block(int width, int layers, std::mt19937_64& rng);
ResidualBlock empty_block(int width);

// Called with (layer, per-head pre-softmax scores) before the softmax.
using ScoreHook = std::function<void(int layer, Eigen::Ref<MatrixF> scores)>;
// Called with (layer, block output).
using BlockHook = std::function<void(int layer, const MatrixF& x)>;

void layer_norm(const MatrixF& x, const MatrixF& weight, const MatrixF& bias, MatrixF& out);

// Runs the block stack in place on x (tokens x width).
void run_transformer(const std::vector<ResidualBlock>& blocks, int heads, MatrixF& x, const ScoreHook& score_hook,
                     const BlockHook& block_hook);

MatrixF gaussian(long rows, long cols, float stddev, std::mt19937_64& rng);

}  // namespace promptseg::backbone::detail
