#include "promptseg/decoder/layers.hpp"

#include <cmath>
#include <numbers>

#include "promptseg/error.hpp"

namespace promptseg::decoder {

Linear::Linear(int in, int out) : weight(Matrix::Zero(in, out)), bias(Matrix::Zero(1, out)) {}

Linear Linear::uniform(int in, int out, std::mt19937_64& rng) {
  Linear l(in, out);
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Eigen::Index i = 0; i < l.weight.size(); ++i) l.weight.data()[i] = dist(rng);
  for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias.data()[i] = dist(rng);
  return l;
}

Matrix linear_forward(const Matrix& x, const Linear& layer) {
  if (x.cols() != layer.in()) {
    throw ConfigError("linear layer expects width " + std::to_string(layer.in()) + ", got " +
                      std::to_string(x.cols()));
  }
  Matrix y = x * layer.weight;
  y.rowwise() += layer.bias.row(0);
  return y;
}

Matrix linear_backward(const Matrix& x, const Linear& layer, const Matrix& dy, Linear& grad) {
  grad.weight.noalias() += x.transpose() * dy;
  grad.bias += dy.colwise().sum();
  return dy * layer.weight.transpose();
}

LayerNorm::LayerNorm(int n) : weight(Matrix::Ones(1, n)), bias(Matrix::Zero(1, n)) {}

namespace {
constexpr double kLayerNormEps = 1e-5;
}

Matrix layer_norm_forward(const Matrix& x, const LayerNorm& ln, LayerNormCache* cache) {
  const auto n = static_cast<double>(x.cols());
  Matrix normalized(x.rows(), x.cols());
  VectorD inv_std(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mean = x.row(r).sum() / n;
    const double var = (x.row(r).array() - mean).square().sum() / n;
    inv_std[r] = 1.0 / std::sqrt(var + kLayerNormEps);
    normalized.row(r) = (x.row(r).array() - mean) * inv_std[r];
  }
  Matrix y = (normalized.array().rowwise() * ln.weight.row(0).array()).rowwise() + ln.bias.row(0).array();
  if (cache) {
    cache->normalized = std::move(normalized);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

Matrix layer_norm_backward(const LayerNormCache& cache, const LayerNorm& ln, const Matrix& dy, LayerNorm& grad) {
  const auto& xhat = cache.normalized;
  grad.weight += (dy.array() * xhat.array()).colwise().sum().matrix();
  grad.bias += dy.colwise().sum();
  const Matrix dxhat = (dy.array().rowwise() * ln.weight.row(0).array()).matrix();
  const double n = static_cast<double>(dy.cols());
  Matrix dx(dy.rows(), dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const double mean_d = dxhat.row(r).sum() / n;
    const double mean_dx = dxhat.row(r).dot(xhat.row(r)) / n;
    dx.row(r) = cache.inv_std[r] * (dxhat.row(r).array() - mean_d - xhat.row(r).array() * mean_dx);
  }
  return dx;
}

Matrix film_forward(const Matrix& tokens, const VectorD& condition, const Film& film, FilmCache* cache) {
  if (condition.size() != film.multiply.in() || tokens.cols() != film.multiply.out()) {
    throw ConfigError("FiLM expects a " + std::to_string(film.multiply.in()) + "-dim condition and " +
                      std::to_string(film.multiply.out()) + "-wide tokens");
  }
  const Eigen::RowVectorXd c = condition.transpose();
  const Eigen::RowVectorXd gamma = c * film.multiply.weight + film.multiply.bias.row(0);
  const Eigen::RowVectorXd beta = c * film.add.weight + film.add.bias.row(0);
  Matrix y = (tokens.array().rowwise() * gamma.array()).rowwise() + beta.array();
  if (cache) {
    cache->tokens = tokens;
    cache->condition = condition;
    cache->gamma = gamma;
  }
  return y;
}

Matrix film_backward(const FilmCache& cache, const Film& film, const Matrix& dy, Film& grad, VectorD* d_condition) {
  const Eigen::RowVectorXd d_gamma = (dy.array() * cache.tokens.array()).colwise().sum();
  const Eigen::RowVectorXd d_beta = dy.colwise().sum();
  grad.multiply.weight.noalias() += cache.condition * d_gamma;
  grad.multiply.bias += d_gamma;
  grad.add.weight.noalias() += cache.condition * d_beta;
  grad.add.bias += d_beta;
  if (d_condition) {
    *d_condition = film.multiply.weight * d_gamma.transpose() + film.add.weight * d_beta.transpose();
  }
  return (dy.array().rowwise() * cache.gamma.array()).matrix();
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_derivative(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

Block Block::init(int width, int hidden, std::mt19937_64& rng) {
  Block b;
  b.ln1 = LayerNorm(width);
  b.qkv = Linear::uniform(width, 3 * width, rng);
  b.out = Linear::uniform(width, width, rng);
  b.ln2 = LayerNorm(width);
  b.fc1 = Linear::uniform(width, hidden, rng);
  b.fc2 = Linear::uniform(hidden, width, rng);
  return b;
}

Matrix block_forward(const Matrix& x, const Block& block, int heads, BlockCache* cache) {
  const auto tokens = x.rows();
  const auto width = x.cols();
  const auto head_dim = width / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));

  BlockCache local;
  BlockCache& c = cache ? *cache : local;
  c.h1 = layer_norm_forward(x, block.ln1, &c.ln1);
  c.qkv = linear_forward(c.h1, block.qkv);
  c.context.resize(tokens, width);
  c.attention.resize(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    const auto q = c.qkv.middleCols(h * head_dim, head_dim);
    const auto k = c.qkv.middleCols(width + h * head_dim, head_dim);
    const auto v = c.qkv.middleCols(2 * width + h * head_dim, head_dim);
    Matrix& a = c.attention[static_cast<std::size_t>(h)];
    a.noalias() = (q * k.transpose()) * scale;
    for (Eigen::Index r = 0; r < tokens; ++r) {
      const double m = a.row(r).maxCoeff();
      a.row(r) = (a.row(r).array() - m).exp().matrix();
      a.row(r) /= a.row(r).sum();
    }
    c.context.middleCols(h * head_dim, head_dim).noalias() = a * v;
  }
  c.x1 = x + linear_forward(c.context, block.out);
  c.h2 = layer_norm_forward(c.x1, block.ln2, &c.ln2);
  c.pre_activation = linear_forward(c.h2, block.fc1);
  c.activation = c.pre_activation.unaryExpr([](double v) { return gelu(v); });
  return c.x1 + linear_forward(c.activation, block.fc2);
}

Matrix block_backward(const BlockCache& c, const Block& block, int heads, const Matrix& dy, Block& grad) {
  const auto width = dy.cols();
  const auto head_dim = width / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));

  // MLP branch
  Matrix d_act = linear_backward(c.activation, block.fc2, dy, grad.fc2);
  const Matrix d_pre = d_act.cwiseProduct(c.pre_activation.unaryExpr([](double v) { return gelu_derivative(v); }));
  const Matrix d_h2 = linear_backward(c.h2, block.fc1, d_pre, grad.fc1);
  Matrix d_x1 = dy + layer_norm_backward(c.ln2, block.ln2, d_h2, grad.ln2);

  // attention branch
  const Matrix d_context = linear_backward(c.context, block.out, d_x1, grad.out);
  Matrix d_qkv(c.qkv.rows(), c.qkv.cols());
  for (int h = 0; h < heads; ++h) {
    const auto q = c.qkv.middleCols(h * head_dim, head_dim);
    const auto k = c.qkv.middleCols(width + h * head_dim, head_dim);
    const auto v = c.qkv.middleCols(2 * width + h * head_dim, head_dim);
    const Matrix& a = c.attention[static_cast<std::size_t>(h)];
    const auto d_out = d_context.middleCols(h * head_dim, head_dim);

    const Matrix d_a = d_out * v.transpose();
    d_qkv.middleCols(2 * width + h * head_dim, head_dim).noalias() = a.transpose() * d_out;
    const Eigen::VectorXd row_dot = (d_a.array() * a.array()).rowwise().sum();
    const Matrix d_s = (a.array() * (d_a.colwise() - row_dot).array()).matrix() * scale;
    d_qkv.middleCols(h * head_dim, head_dim).noalias() = d_s * k;
    d_qkv.middleCols(width + h * head_dim, head_dim).noalias() = d_s.transpose() * q;
  }
  const Matrix d_h1 = linear_backward(c.h1, block.qkv, d_qkv, grad.qkv);
  return d_x1 + layer_norm_backward(c.ln1, block.ln1, d_h1, grad.ln1);
}

}  // namespace promptseg::decoder
