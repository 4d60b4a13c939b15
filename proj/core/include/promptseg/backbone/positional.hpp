#pragma once

#include "promptseg/backbone/config.hpp"
#include "promptseg/tensor.hpp"

namespace promptseg::backbone {

inline constexpr const char* kInterpolationKernel = "bilinear";

// Resamples learned positional embeddings, (1 + G*G) x width with the CLS row
// first, onto a target token grid. The CLS row is copied unchanged; patch rows
// are resampled bilinearly with half-pixel centres. A target equal to the
// trained grid returns the input exactly.
MatrixF interpolate_positional_embeddings(const MatrixF& trained, GridSize target);

}  // namespace promptseg::backbone
