#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "skewprune/model.hpp"
#include "skewprune/tensor.hpp"

namespace skewprune {

// How the per-position norm vector is drawn from a multi-instance capture:
// the first window instance alone, or the per-position mean over instances.
enum class NormSelector { First, MeanOverInstances };

// One L2 norm per window position, for a single head or channel group.
using NormVector = std::vector<double>;

struct HeadSkew {
  int64_t id = 0;  // position within the block's current head set
  double skew = 0.0;
};

struct GroupSkew {
  int64_t id = 0;  // contiguous channel-group index
  double skew = 0.0;
};

// Per-block skewness scores for every current head and channel group.
struct SkewReport {
  BlockId block;
  int64_t revision = 0;         // block structure revision the scores describe
  int64_t calib_batch_id = 0;   // which calibration batch produced the capture
  int64_t group_count = 0;      // 0 when the MLP branch is already an identity
  int64_t group_size = 0;       // channels per group
  std::vector<HeadSkew> head_skews;
  std::vector<GroupSkew> group_skews;
};

// Indices (within the current structure) whose skewness fell at or below zero.
struct PruneDecision {
  BlockId block;
  int64_t revision = 0;
  int64_t num_heads = 0;   // current head count when the decision was made
  int64_t num_groups = 0;  // current group count
  std::vector<int64_t> heads_to_prune;
  std::vector<int64_t> groups_to_prune;

  bool prunes_all_heads() const {
    return num_heads > 0 && static_cast<int64_t>(heads_to_prune.size()) == num_heads;
  }
  bool prunes_all_groups() const {
    return num_groups > 0 && static_cast<int64_t>(groups_to_prune.size()) == num_groups;
  }
  bool empty() const { return heads_to_prune.empty() && groups_to_prune.empty(); }
};

// Population third standardized moment, accumulated in 64-bit.
// Zero-variance input returns 0 by convention. Throws ArgumentError on
// fewer than two values.
double skewness(const NormVector& v);

// Per-head norm vectors from an attention capture [instances x T x H x D]:
// entry (i) of head h is the L2 norm over D at window position i.
// Throws StateError when the capture is absent.
std::vector<NormVector> extract_norms_msa(const Tensor& a,
                                          NormSelector sel = NormSelector::First);

// Per-group norm vectors from an MLP capture [instances x T x C]: channels
// are split into `group_count` contiguous groups; entry (i) of group g is the
// L2 norm over that group's channels at position i. Throws ConfigError when
// C is not divisible by group_count, StateError when the capture is absent.
std::vector<NormVector> extract_norms_mlp(const Tensor& z, int64_t group_count,
                                          NormSelector sel = NormSelector::First);

// Scores every current head and channel group of one block's capture.
// Branches already replaced by identities contribute no entries.
SkewReport analyze_capture(const ActivationCapture& cap, BlockId block,
                           const BlockPruneState& state, int64_t group_size,
                           NormSelector sel = NormSelector::First,
                           int64_t calib_batch_id = 0);

// Selects every head/group with skewness <= 0 for pruning.
PruneDecision decide(const SkewReport& report);

// Stable text rendering with six-decimal scores, one line per head/group.
std::string format_skew_report(const SkewReport& report);

}  // namespace skewprune
