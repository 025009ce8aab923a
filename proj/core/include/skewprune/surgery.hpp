#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "skewprune/model.hpp"
#include "skewprune/skew.hpp"

namespace skewprune {

// Record of one structural edit: sizes and costs on both sides of the cut.
struct PruneAudit {
  BlockId block;
  int64_t revision_before = 0;
  int64_t revision_after = 0;
  int64_t heads_before = 0;
  int64_t heads_after = 0;
  int64_t channels_before = 0;
  int64_t channels_after = 0;
  int64_t params_before = 0;
  int64_t params_after = 0;
  int64_t flops_before = 0;  // per image
  int64_t flops_after = 0;
  bool msa_became_identity = false;
  bool mlp_became_identity = false;

  int64_t param_delta() const { return params_before - params_after; }
  int64_t flops_delta() const { return flops_before - flops_after; }
};

// Removes the given heads (current positions) from one block: the head's
// columns leave the q/k/v projections and their biases, its rows leave the
// output projection, and its column leaves the positional-bias table. An
// empty keep-set converts the branch to an identity. No-op on an empty list;
// any structural change bumps the block's revision.
void prune_heads(Model& m, BlockId id, const std::vector<int64_t>& heads_to_prune);

// Removes the given contiguous channel groups (current positions) from one
// block's MLP: kept channels are the union of kept groups; first-layer
// columns/bias entries and second-layer rows are restricted to them; the
// second-layer bias is untouched. Empty keep-set converts to an identity.
void prune_mlp(Model& m, BlockId id, const std::vector<int64_t>& groups_to_prune);

// Applies a decision (heads first, then groups) after checking it still
// describes the block's current structure; stale revisions are rejected with
// StateError. Returns the audit of measured deltas.
PruneAudit apply_decision(Model& m, const PruneDecision& d);

// Closed-form parameter cost of one head / one channel group at a stage,
// matching what surgery removes per unit pruned (identity conversions
// additionally drop the branch's output bias).
int64_t per_head_param_delta(const ModelConfig& cfg, int64_t stage);
int64_t per_group_param_delta(const ModelConfig& cfg, int64_t stage);

// Stable text rendering for run reports.
std::string format_prune_audit(const PruneAudit& audit);

}  // namespace skewprune
