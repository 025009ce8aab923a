#include "skewprune/surgery.hpp"

#include <algorithm>
#include <cstdio>
#include <set>

#include "skewprune/errors.hpp"

namespace skewprune {

namespace {

// Sorted unique current positions from a prune list, validated against n.
std::vector<int64_t> checked_set(const std::vector<int64_t>& ids, int64_t n,
                                 const char* what) {
  std::set<int64_t> s;
  for (const int64_t id : ids) {
    if (id < 0 || id >= n) {
      throw IndexError(std::string(what) + " " + std::to_string(id) + " out of range [0," +
                       std::to_string(n) + ")");
    }
    s.insert(id);
  }
  return {s.begin(), s.end()};
}

std::vector<int64_t> complement(const std::vector<int64_t>& pruned, int64_t n) {
  std::vector<int64_t> keep;
  size_t j = 0;
  for (int64_t i = 0; i < n; ++i) {
    if (j < pruned.size() && pruned[j] == i) {
      ++j;
    } else {
      keep.push_back(i);
    }
  }
  return keep;
}

// New matrix keeping, per retained slot, `width` consecutive columns.
Tensor take_cols(const Tensor& t, const std::vector<int64_t>& slots, int64_t width) {
  const int64_t rows = t.shape[0], cols = t.shape[1];
  const int64_t kept = static_cast<int64_t>(slots.size()) * width;
  Tensor out = Tensor::zeros({rows, kept});
  for (int64_t r = 0; r < rows; ++r) {
    float* dst = out.data.data() + r * kept;
    const float* src = t.data.data() + r * cols;
    for (size_t s = 0; s < slots.size(); ++s) {
      std::copy(src + slots[s] * width, src + (slots[s] + 1) * width,
                dst + static_cast<int64_t>(s) * width);
    }
  }
  return out;
}

Tensor take_rows(const Tensor& t, const std::vector<int64_t>& slots, int64_t width) {
  const int64_t cols = t.shape[1];
  Tensor out = Tensor::zeros({static_cast<int64_t>(slots.size()) * width, cols});
  for (size_t s = 0; s < slots.size(); ++s) {
    const float* src = t.data.data() + slots[s] * width * cols;
    std::copy(src, src + width * cols, out.data.data() + static_cast<int64_t>(s) * width * cols);
  }
  return out;
}

Tensor take_entries(const Tensor& t, const std::vector<int64_t>& slots, int64_t width) {
  Tensor out = Tensor::zeros({static_cast<int64_t>(slots.size()) * width});
  for (size_t s = 0; s < slots.size(); ++s) {
    std::copy(t.data.begin() + slots[s] * width, t.data.begin() + (slots[s] + 1) * width,
              out.data.begin() + static_cast<int64_t>(s) * width);
  }
  return out;
}

}  // namespace

void prune_heads(Model& m, BlockId id, const std::vector<int64_t>& heads_to_prune) {
  Block& blk = m.block_at(id);
  const int64_t h = static_cast<int64_t>(blk.state.kept_heads.size());
  const auto pruned = checked_set(heads_to_prune, h, "head");
  if (pruned.empty()) return;
  const auto keep = complement(pruned, h);
  std::vector<int64_t> kept_orig;
  for (const int64_t k : keep) kept_orig.push_back(blk.state.kept_heads[static_cast<size_t>(k)]);
  if (keep.empty()) {
    blk.msa = MsaParams{};
    blk.state.kept_heads.clear();
    blk.state.msa_is_identity = true;
  } else {
    const int64_t d = m.config.head_dim(id.stage);
    blk.msa.w_q = take_cols(blk.msa.w_q, keep, d);
    blk.msa.b_q = take_entries(blk.msa.b_q, keep, d);
    blk.msa.w_k = take_cols(blk.msa.w_k, keep, d);
    blk.msa.b_k = take_entries(blk.msa.b_k, keep, d);
    blk.msa.w_v = take_cols(blk.msa.w_v, keep, d);
    blk.msa.b_v = take_entries(blk.msa.b_v, keep, d);
    blk.msa.w_o = take_rows(blk.msa.w_o, keep, d);
    if (m.config.use_rel_pos_bias) blk.msa.rel_bias = take_cols(blk.msa.rel_bias, keep, 1);
    blk.state.kept_heads = std::move(kept_orig);
  }
  blk.state.revision += 1;
}

void prune_mlp(Model& m, BlockId id, const std::vector<int64_t>& groups_to_prune) {
  Block& blk = m.block_at(id);
  const int64_t c = static_cast<int64_t>(blk.state.kept_channels.size());
  const int64_t width = m.config.mlp_group_size(id.stage);
  if (!blk.state.mlp_is_identity && c % width != 0) {
    throw ConfigError("channel count " + std::to_string(c) + " not divisible by group size " +
                      std::to_string(width));
  }
  const int64_t groups = blk.state.mlp_is_identity ? 0 : c / width;
  const auto pruned = checked_set(groups_to_prune, groups, "group");
  if (pruned.empty()) return;
  const auto keep = complement(pruned, groups);
  if (keep.empty()) {
    blk.mlp = MlpParams{};
    blk.state.kept_channels.clear();
    blk.state.mlp_is_identity = true;
  } else {
    std::vector<int64_t> kept_orig;
    for (const int64_t g : keep) {
      for (int64_t k = 0; k < width; ++k) {
        kept_orig.push_back(blk.state.kept_channels[static_cast<size_t>(g * width + k)]);
      }
    }
    blk.mlp.w1 = take_cols(blk.mlp.w1, keep, width);
    blk.mlp.b1 = take_entries(blk.mlp.b1, keep, width);
    blk.mlp.w2 = take_rows(blk.mlp.w2, keep, width);
    blk.state.kept_channels = std::move(kept_orig);
  }
  blk.state.revision += 1;
}

PruneAudit apply_decision(Model& m, const PruneDecision& d) {
  Block& blk = m.block_at(d.block);
  if (d.revision != blk.state.revision) {
    throw StateError("stale prune decision: made at revision " + std::to_string(d.revision) +
                     ", block is at " + std::to_string(blk.state.revision));
  }
  PruneAudit audit;
  audit.block = d.block;
  audit.revision_before = blk.state.revision;
  audit.heads_before = static_cast<int64_t>(blk.state.kept_heads.size());
  audit.channels_before = static_cast<int64_t>(blk.state.kept_channels.size());
  audit.params_before = m.count_params();
  audit.flops_before = m.count_flops(1);
  const bool msa_id_before = blk.state.msa_is_identity;
  const bool mlp_id_before = blk.state.mlp_is_identity;

  prune_heads(m, d.block, d.heads_to_prune);
  prune_mlp(m, d.block, d.groups_to_prune);

  audit.revision_after = blk.state.revision;
  audit.heads_after = static_cast<int64_t>(blk.state.kept_heads.size());
  audit.channels_after = static_cast<int64_t>(blk.state.kept_channels.size());
  audit.params_after = m.count_params();
  audit.flops_after = m.count_flops(1);
  audit.msa_became_identity = !msa_id_before && blk.state.msa_is_identity;
  audit.mlp_became_identity = !mlp_id_before && blk.state.mlp_is_identity;
  return audit;
}

int64_t per_head_param_delta(const ModelConfig& cfg, int64_t stage) {
  const int64_t e = cfg.stage_dim(stage), d = cfg.head_dim(stage);
  const int64_t span = cfg.use_rel_pos_bias
                           ? (2 * cfg.window_size - 1) * (2 * cfg.window_size - 1)
                           : 0;
  return 3 * (e * d + d) + d * e + span;
}

int64_t per_group_param_delta(const ModelConfig& cfg, int64_t stage) {
  const int64_t e = cfg.stage_dim(stage), g = cfg.mlp_group_size(stage);
  return 2 * g * e + g;
}

std::string format_prune_audit(const PruneAudit& audit) {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "block %lld.%lld revision %lld->%lld heads %lld->%lld channels %lld->%lld "
                "params %lld->%lld flops %lld->%lld msa_identity %d mlp_identity %d\n",
                static_cast<long long>(audit.block.stage),
                static_cast<long long>(audit.block.block),
                static_cast<long long>(audit.revision_before),
                static_cast<long long>(audit.revision_after),
                static_cast<long long>(audit.heads_before),
                static_cast<long long>(audit.heads_after),
                static_cast<long long>(audit.channels_before),
                static_cast<long long>(audit.channels_after),
                static_cast<long long>(audit.params_before),
                static_cast<long long>(audit.params_after),
                static_cast<long long>(audit.flops_before),
                static_cast<long long>(audit.flops_after),
                audit.msa_became_identity ? 1 : 0, audit.mlp_became_identity ? 1 : 0);
  return buf;
}

}  // namespace skewprune
