#pragma once

#include "promptseg/backbone/config.hpp"
#include "promptseg/image.hpp"
#include "promptseg/tensor.hpp"

namespace promptseg::backbone {

enum class AttentionMaskMode {
  None,
  ClsOnlyLayer,        // CLS row restricted at `layer` only
  ClsOnlyAllLayers,    // CLS row restricted at every layer
  AllTokensAllLayers,  // every row restricted at every layer
};

std::string to_string(AttentionMaskMode mode);

// Restricts token interaction to in-mask patches plus the CLS token.
struct AttentionMaskPolicy {
  AttentionMaskMode mode = AttentionMaskMode::None;
  Mask grid_mask;  // one entry per patch token, token grid geometry
  int layer = 11;

  bool applies_to(int layer_index) const;
  // Throws InputError when the mask does not match the grid and
  // DegenerateMaskError when an active policy carries an all-zero mask.
  void validate(GridSize grid) const;
};

// Masks pre-softmax scores (tokens x tokens, CLS first) in place by writing
// -inf at disallowed columns for the rows the policy restricts at `layer`.
void apply_attention_mask(const AttentionMaskPolicy& policy, int layer, Eigen::Ref<MatrixF> scores);

}  // namespace promptseg::backbone
