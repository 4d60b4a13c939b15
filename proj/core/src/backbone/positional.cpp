#include "promptseg/backbone/positional.hpp"

#include <algorithm>
#include <cmath>

#include "promptseg/error.hpp"

namespace promptseg::backbone {

namespace {

struct Tap {
  int lo;
  int hi;
  float frac;
};

Tap source_tap(int dst, int src_size, int dst_size) {
  const double scale = static_cast<double>(src_size) / dst_size;
  double src = (dst + 0.5) * scale - 0.5;
  src = std::clamp(src, 0.0, static_cast<double>(src_size - 1));
  const int lo = static_cast<int>(std::floor(src));
  const int hi = std::min(lo + 1, src_size - 1);
  return {lo, hi, static_cast<float>(src - lo)};
}

}  // namespace

MatrixF interpolate_positional_embeddings(const MatrixF& trained, GridSize target) {
  if (target.rows <= 0 || target.cols <= 0) throw InputError("target grid must have positive sides");
  const auto patches = trained.rows() - 1;
  const int grid = static_cast<int>(std::lround(std::sqrt(static_cast<double>(patches))));
  if (patches < 1 || static_cast<long>(grid) * grid != patches) {
    throw InputError("trained positional embedding must have 1 + G^2 rows");
  }
  if (target.rows == grid && target.cols == grid) return trained;

  const auto width = trained.cols();
  MatrixF out(target.tokens(), width);
  out.row(0) = trained.row(0);
  auto at = [&](int r, int c) { return trained.row(1 + r * grid + c); };
  for (int y = 0; y < target.rows; ++y) {
    const Tap ty = source_tap(y, grid, target.rows);
    for (int x = 0; x < target.cols; ++x) {
      const Tap tx = source_tap(x, grid, target.cols);
      // lerp written as a + f (b - a) so constant inputs stay exactly constant
      const Eigen::RowVectorXf top = at(ty.lo, tx.lo) + tx.frac * (at(ty.lo, tx.hi) - at(ty.lo, tx.lo));
      const Eigen::RowVectorXf bottom = at(ty.hi, tx.lo) + tx.frac * (at(ty.hi, tx.hi) - at(ty.hi, tx.lo));
      out.row(1 + y * target.cols + x) = top + ty.frac * (bottom - top);
    }
  }
  return out;
}

}  // namespace promptseg::backbone
