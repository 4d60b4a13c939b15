#include "promptseg/backbone/attention_mask.hpp"

#include <limits>

#include "promptseg/error.hpp"

namespace promptseg::backbone {

std::string to_string(AttentionMaskMode mode) {
  switch (mode) {
    case AttentionMaskMode::None:
      return "none";
    case AttentionMaskMode::ClsOnlyLayer:
      return "cls-only-layer-k";
    case AttentionMaskMode::ClsOnlyAllLayers:
      return "cls-only-all-layers";
    case AttentionMaskMode::AllTokensAllLayers:
      return "all-tokens-all-layers";
  }
  return "unknown";
}

bool AttentionMaskPolicy::applies_to(int layer_index) const {
  switch (mode) {
    case AttentionMaskMode::None:
      return false;
    case AttentionMaskMode::ClsOnlyLayer:
      return layer_index == layer;
    case AttentionMaskMode::ClsOnlyAllLayers:
    case AttentionMaskMode::AllTokensAllLayers:
      return true;
  }
  return false;
}

void AttentionMaskPolicy::validate(GridSize grid) const {
  if (mode == AttentionMaskMode::None) return;
  if (grid_mask.height != grid.rows || grid_mask.width != grid.cols) {
    throw InputError("attention mask grid " + std::to_string(grid_mask.height) + "x" +
                     std::to_string(grid_mask.width) + " does not match token grid " + std::to_string(grid.rows) +
                     "x" + std::to_string(grid.cols));
  }
  if (!grid_mask.any()) throw DegenerateMaskError("attention mask is all zero; CLS would attend to nothing");
}

void apply_attention_mask(const AttentionMaskPolicy& policy, int layer, Eigen::Ref<MatrixF> scores) {
  if (!policy.applies_to(layer)) return;
  const auto tokens = scores.rows();
  if (scores.cols() != tokens || static_cast<std::size_t>(tokens - 1) != policy.grid_mask.bits.size()) {
    throw InputError("attention score matrix does not match the policy's token grid");
  }
  if (!policy.grid_mask.any()) throw DegenerateMaskError("attention mask is all zero; CLS would attend to nothing");

  constexpr float kBlocked = -std::numeric_limits<float>::infinity();
  const auto& bits = policy.grid_mask.bits;
  const bool all_rows = policy.mode == AttentionMaskMode::AllTokensAllLayers;
  const Eigen::Index rows = all_rows ? tokens : 1;
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 1; c < tokens; ++c) {
      if (!bits[static_cast<std::size_t>(c - 1)]) scores(r, c) = kBlocked;
    }
  }
}

}  // namespace promptseg::backbone
