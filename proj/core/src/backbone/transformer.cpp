#include "transformer.hpp"

#include <cmath>

namespace promptseg::backbone::detail {

MatrixF gaussian(long rows, long cols, float stddev, std::mt19937_64& rng) {
  std::normal_distribution<float> dist(0.f, stddev);
  MatrixF m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

ResidualBlock empty_block(int width) {
  ResidualBlock b;
  b.ln1_weight = MatrixF::Ones(1, width);
  b.ln1_bias = MatrixF::Zero(1, width);
  b.in_proj_weight = MatrixF::Zero(3 * width, width);
  b.in_proj_bias = MatrixF::Zero(1, 3 * width);
  b.out_proj_weight = MatrixF::Zero(width, width);
  b.out_proj_bias = MatrixF::Zero(1, width);
  b.ln2_weight = MatrixF::Ones(1, width);
  b.ln2_bias = MatrixF::Zero(1, width);
  b.fc_weight = MatrixF::Zero(4 * width, width);
  b.fc_bias = MatrixF::Zero(1, 4 * width);
  b.proj_weight = MatrixF::Zero(width, 4 * width);
  b.proj_bias = MatrixF::Zero(1, width);
  return b;
}

ResidualBlock make_block(int width, int layers, std::mt19937_64& rng) {
  // Scaled-normal initialisation of the original dual-encoder recipe.
  const float attn_std = 1.f / std::sqrt(static_cast<float>(width));
  const float proj_std = attn_std / std::sqrt(2.f * static_cast<float>(layers));
  const float fc_std = 1.f / std::sqrt(2.f * static_cast<float>(width));
  ResidualBlock b = empty_block(width);
  b.in_proj_weight = gaussian(3 * width, width, attn_std, rng);
  b.out_proj_weight = gaussian(width, width, proj_std, rng);
  b.fc_weight = gaussian(4 * width, width, fc_std, rng);
  b.proj_weight = gaussian(width, 4 * width, proj_std, rng);
  return b;
}

void layer_norm(const MatrixF& x, const MatrixF& weight, const MatrixF& bias, MatrixF& out) {
  out.resize(x.rows(), x.cols());
  const float n = static_cast<float>(x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const float mean = x.row(r).sum() / n;
    const float var = (x.row(r).array() - mean).square().sum() / n;
    const float rstd = 1.f / std::sqrt(var + 1e-5f);
    out.row(r) = ((x.row(r).array() - mean) * rstd * weight.row(0).array() + bias.row(0).array()).matrix();
  }
}

namespace {

void softmax_rows(Eigen::Ref<MatrixF> s) {
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    const float m = s.row(r).maxCoeff();
    s.row(r) = (s.row(r).array() - m).exp().matrix();
    s.row(r) /= s.row(r).sum();
  }
}

void quick_gelu(MatrixF& x) { x = (x.array() / (1.f + (-1.702f * x.array()).exp())).matrix(); }

void block_forward(const ResidualBlock& b, int layer, int heads, MatrixF& x, const ScoreHook& score_hook) {
  const auto tokens = x.rows();
  const auto width = x.cols();
  const auto head_dim = width / heads;
  const float scale = 1.f / std::sqrt(static_cast<float>(head_dim));

  MatrixF h;
  layer_norm(x, b.ln1_weight, b.ln1_bias, h);
  MatrixF qkv = h * b.in_proj_weight.transpose();
  qkv.rowwise() += b.in_proj_bias.row(0);

  MatrixF context(tokens, width);
  MatrixF scores(tokens, tokens);
  for (int head = 0; head < heads; ++head) {
    const auto q = qkv.middleCols(head * head_dim, head_dim);
    const auto k = qkv.middleCols(width + head * head_dim, head_dim);
    const auto v = qkv.middleCols(2 * width + head * head_dim, head_dim);
    scores.noalias() = (q * k.transpose()) * scale;
    if (score_hook) score_hook(layer, scores);
    softmax_rows(scores);
    context.middleCols(head * head_dim, head_dim).noalias() = scores * v;
  }
  MatrixF attn = context * b.out_proj_weight.transpose();
  attn.rowwise() += b.out_proj_bias.row(0);
  x += attn;

  layer_norm(x, b.ln2_weight, b.ln2_bias, h);
  MatrixF hidden = h * b.fc_weight.transpose();
  hidden.rowwise() += b.fc_bias.row(0);
  quick_gelu(hidden);
  MatrixF mlp = hidden * b.proj_weight.transpose();
  mlp.rowwise() += b.proj_bias.row(0);
  x += mlp;
}

}  // namespace

void run_transformer(const std::vector<ResidualBlock>& blocks, int heads, MatrixF& x, const ScoreHook& score_hook,
                     const BlockHook& block_hook) {
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    block_forward(blocks[i], static_cast<int>(i), heads, x, score_hook);
    if (block_hook) block_hook(static_cast<int>(i), x);
  }
}

}  // namespace promptseg::backbone::detail
