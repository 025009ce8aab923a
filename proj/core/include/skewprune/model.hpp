#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "skewprune/graph.hpp"
#include "skewprune/tensor.hpp"

namespace skewprune {

/// How the MLP intermediate width C = r·E is cut into prunable groups.
/// RatioGroups (default): r contiguous groups of size E — group granularity
/// comparable to attention heads. DimGroups: E contiguous groups of size r.
enum class MlpGrouping { RatioGroups, DimGroups };

struct ModelConfig {
  int64_t image_size = 32;
  int64_t patch_size = 4;
  int64_t embed_dim = 32;                 // channels entering stage 0; doubles per stage
  std::vector<int64_t> depths{2, 2};      // blocks per stage
  std::vector<int64_t> num_heads{2, 4};   // heads per stage (before pruning)
  int64_t window_size = 4;                // tokens per window side
  int64_t mlp_ratio = 4;                  // intermediate width = ratio · stage dim
  int64_t num_classes = 7;
  bool use_shift = true;                  // cyclic shift on odd blocks
  bool use_rel_pos_bias = true;
  int64_t sex_vocab = 3;                  // 0 = unknown
  int64_t age_vocab = 22;                 // 0 = unknown, then 21 five-year buckets
  int64_t loc_vocab = 16;                 // 0 = unknown
  // Fusion order: image features, sex, age, localization. Must sum to 1.
  std::array<double, 4> fusion_weights{0.85, 0.05, 0.05, 0.05};
  MlpGrouping mlp_grouping = MlpGrouping::RatioGroups;
  double layer_norm_eps = 1e-5;
  uint64_t seed = 0;

  int64_t num_stages() const { return static_cast<int64_t>(depths.size()); }
  int64_t stage_dim(int64_t s) const { return embed_dim << s; }
  int64_t head_dim(int64_t s) const { return stage_dim(s) / num_heads[static_cast<size_t>(s)]; }
  int64_t grid_at(int64_t s) const { return (image_size / patch_size) >> s; }
  int64_t final_dim() const { return stage_dim(num_stages() - 1); }
  int64_t tokens_per_window() const { return window_size * window_size; }
  int64_t mlp_group_size(int64_t s) const {
    return mlp_grouping == MlpGrouping::RatioGroups ? stage_dim(s) : mlp_ratio;
  }

  /// Throws ConfigError naming the first violated constraint.
  void validate() const;
};

struct TabularInput {
  int64_t sex_id = 0;
  int64_t age_bucket_id = 0;
  int64_t localization_id = 0;
};

/// Which heads/channels of a block survive, as ascending indices into the
/// block's ORIGINAL dimensions. Empty keep-set == identity-replaced branch.
/// revision increments on every structural edit so stale decisions are
/// rejected rather than double-applied.
struct BlockPruneState {
  std::vector<int64_t> kept_heads;
  std::vector<int64_t> kept_channels;
  bool msa_is_identity = false;
  bool mlp_is_identity = false;
  int64_t revision = 0;
};

struct BlockId {
  int64_t stage = 0;
  int64_t block = 0;
  bool operator<(const BlockId& o) const {
    return stage != o.stage ? stage < o.stage : block < o.block;
  }
  bool operator==(const BlockId& o) const { return stage == o.stage && block == o.block; }
};

/// Captured activations for skew scoring, copied out of a forward pass.
///   a: per-head attention outputs before the output projection,
///      [window instances × w² × H × D]; empty when the MSA is identity.
///   z: post-GeLU MLP intermediate gathered into the block's window order,
///      [window instances × w² × C]; empty when the MLP is identity.
/// Window instances enumerate (batch element, window) pairs row-major.
struct ActivationCapture {
  Tensor a;
  Tensor z;
};

struct MsaParams {
  Tensor w_q, b_q, w_k, b_k, w_v, b_v;  // [E × H·D] / [H·D]
  Tensor w_o, b_o;                      // [H·D × E] / [E]
  Tensor rel_bias;                      // [(2w−1)² × H] when enabled, else empty
};

struct MlpParams {
  Tensor w1, b1;  // [E × C] / [C]
  Tensor w2, b2;  // [C × E] / [E]
};

struct Block {
  Tensor norm1_gamma, norm1_beta;  // kept even when the MSA is identity
  Tensor norm2_gamma, norm2_beta;  // kept even when the MLP is identity
  MsaParams msa;
  MlpParams mlp;
  BlockPruneState state;
};

struct Stage {
  std::vector<Block> blocks;
  Tensor merge_weight, merge_bias;  // [4E × 2E] / [2E]; empty on the last stage
  bool frozen = false;              // excluded from gradient updates
};

/// One graph leaf per parameter, in the fixed visit order.
struct ParamRef {
  std::string name;
  Var var;
  bool trainable = true;
};

struct GraphForward {
  Var logits;                                    // [B × num_classes]
  std::vector<ParamRef> params;
  std::map<BlockId, ActivationCapture> captures;
};

/// The multimodal classifier: patch embedding, stages of windowed-attention
/// blocks with optional cyclic shift and per-head relative position bias,
/// 2×2 patch merging between stages, mean-pooled image features fused with
/// lookup-embedded tabular features by a fixed weighted sum, then a linear
/// classifier. Blocks honour their BlockPruneState (smaller tensors or
/// identity branches); pruning surgery lives in surgery.hpp.
struct Model {
  ModelConfig config;
  Tensor patch_weight, patch_bias;  // [3·p² × E] / [E]
  std::vector<Stage> stages;
  Tensor head_norm_gamma, head_norm_beta;  // [F]
  Tensor head_weight, head_bias;           // [F × K] / [K]
  Tensor sex_table, age_table, loc_table;  // [vocab × F]

  /// Fresh model with seeded initialization: truncated-normal std 0.02 for
  /// weights and embeddings, zeros for biases, ones for norm gains. Each
  /// parameter draws from its own stream keyed by name, so values do not
  /// depend on visit order.
  static Model init(const ModelConfig& cfg);

  /// Allocates zero-valued tensors shaped for the given per-stage prune
  /// states (checkpoint loading). States sized [num_stages][depth].
  static Model skeleton(const ModelConfig& cfg,
                        const std::vector<std::vector<BlockPruneState>>& states);

  /// Visits every parameter as (name, tensor, trainable) in a fixed
  /// structural order. trainable is false for parameters of frozen stages.
  void visit_params(const std::function<void(const std::string&, Tensor&, bool)>& fn);
  void visit_params(const std::function<void(const std::string&, const Tensor&, bool)>& fn) const;

  int64_t count_params() const;

  /// Forward multiply-add style cost for a batch, per the documented
  /// accounting constants (linear/matmul 2·m·k·n, layer norm 5 and GeLU 8
  /// per element, softmax 5 per attention entry; residual adds, scalings,
  /// lookups and pooling excluded).
  int64_t count_flops(int64_t batch = 1) const;

  /// 4 bytes per parameter; the model keeps no persistent buffers (index
  /// maps are derived from the config on the fly).
  int64_t memory_footprint_bytes() const;

  /// Builds the forward graph on g. images: [B × 3 × S × S] in [0,1];
  /// one TabularInput per image; captures filled for the requested blocks
  /// from the current (possibly pruned) structure.
  GraphForward build(Graph& g, const Tensor& images, const std::vector<TabularInput>& tab,
                     const std::set<BlockId>& capture = {}) const;

  /// Convenience inference pass (no gradient tape).
  Tensor forward_logits(const Tensor& images, const std::vector<TabularInput>& tab) const;

  /// Inference pass that also captures activations for the given blocks.
  std::map<BlockId, ActivationCapture> capture_activations(
      const Tensor& images, const std::vector<TabularInput>& tab,
      const std::set<BlockId>& blocks) const;

  const Block& block_at(BlockId id) const;
  Block& block_at(BlockId id);
};

/// Cuts [B × 3 × S × S] images into per-patch rows [B·N × 3·p²], patches
/// row-major per image, features ordered channel, then row, then column.
Tensor patchify(const Tensor& images, int64_t patch_size);

}  // namespace skewprune
