#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "promptseg/tensor.hpp"

// Double-precision building blocks of the trainable decoder. Each forward
// optionally records what its backward needs; backward functions accumulate
// parameter gradients into a same-shaped parameter struct and return the
// gradient with respect to the input.
namespace promptseg::decoder {

using Matrix = MatrixD;

// y = x W + b with W stored in x out.
struct Linear {
  Matrix weight;
  Matrix bias;  // 1 x out

  Linear() = default;
  Linear(int in, int out);
  // PyTorch-style U(-1/sqrt(in), 1/sqrt(in)) for weight and bias.
  static Linear uniform(int in, int out, std::mt19937_64& rng);

  long in() const { return weight.rows(); }
  long out() const { return weight.cols(); }
  std::size_t size() const { return static_cast<std::size_t>(weight.size() + bias.size()); }
};

Matrix linear_forward(const Matrix& x, const Linear& layer);
Matrix linear_backward(const Matrix& x, const Linear& layer, const Matrix& dy, Linear& grad);

struct LayerNorm {
  Matrix weight;  // 1 x n
  Matrix bias;    // 1 x n

  LayerNorm() = default;
  explicit LayerNorm(int n);
  std::size_t size() const { return static_cast<std::size_t>(weight.size() + bias.size()); }
};

struct LayerNormCache {
  Matrix normalized;
  VectorD inv_std;
};

Matrix layer_norm_forward(const Matrix& x, const LayerNorm& ln, LayerNormCache* cache);
Matrix layer_norm_backward(const LayerNormCache& cache, const LayerNorm& ln, const Matrix& dy, LayerNorm& grad);

// Feature-wise affine modulation: gamma = c Wm + bm, beta = c Wa + ba,
// out = gamma (.) token + beta for every token row.
struct Film {
  Linear multiply;
  Linear add;
  std::size_t size() const { return multiply.size() + add.size(); }
};

struct FilmCache {
  Matrix tokens;
  VectorD condition;
  Eigen::RowVectorXd gamma;
};

Matrix film_forward(const Matrix& tokens, const VectorD& condition, const Film& film, FilmCache* cache);
// Returns dL/dtokens; writes dL/dcondition into d_condition when non-null.
Matrix film_backward(const FilmCache& cache, const Film& film, const Matrix& dy, Film& grad, VectorD* d_condition);

// Pre-norm transformer block: x + MHA(LN(x)), then + MLP(LN(.)) with GELU.
struct Block {
  LayerNorm ln1;
  Linear qkv;
  Linear out;
  LayerNorm ln2;
  Linear fc1;
  Linear fc2;

  static Block init(int width, int hidden, std::mt19937_64& rng);
  std::size_t size() const {
    return ln1.size() + qkv.size() + out.size() + ln2.size() + fc1.size() + fc2.size();
  }
};

struct BlockCache {
  LayerNormCache ln1, ln2;
  Matrix h1, qkv, context, x1, h2, pre_activation, activation;
  std::vector<Matrix> attention;  // one tokens x tokens map per head
};

Matrix block_forward(const Matrix& x, const Block& block, int heads, BlockCache* cache);
Matrix block_backward(const BlockCache& cache, const Block& block, int heads, const Matrix& dy, Block& grad);

double gelu(double x);
double gelu_derivative(double x);

}  // namespace promptseg::decoder
