#pragma once

#include <cstdint>
#include <vector>

#include "skewprune/graph.hpp"
#include "skewprune/tensor.hpp"

namespace skewprune::ops {

// All ops treat rank-2 tensors as row-major matrices. Forward values are
// 32-bit floats; reductions (means, variances, softmax denominators, bias
// column sums, losses) accumulate in 64-bit. Every op records its backward
// closure only when the graph has gradients enabled and at least one input
// requires a gradient.

/// Matrix product [m×k]·[k×n] -> [m×n].
Var matmul(Var a, Var b);

/// Elementwise sum of two same-shaped tensors.
Var add(Var a, Var b);

/// Adds a length-C bias vector to every row of an [R×C] matrix.
Var add_row_bias(Var x, Var bias);

/// Multiplies every element by a scalar constant.
Var scale(Var x, double factor);

/// Row gather: out[i,:] = x[perm[i],:]. Callers pass bijective perms (window
/// partition, cyclic shift, patch-merge order); only bounds are validated.
Var permute_rows(Var x, std::vector<int64_t> perm);

/// Same data, new shape (element counts must agree).
Var reshape(Var x, std::vector<int64_t> new_shape);

/// Per-row normalization over the last axis with population variance:
/// (x-mean)/sqrt(var+eps)*gamma + beta. Statistics in 64-bit.
Var layer_norm(Var x, Var gamma, Var beta, double eps);

/// Exact GeLU x*Phi(x) with Phi the standard normal CDF (erf-based).
Var gelu(Var x);

/// Last-axis softmax with max subtraction; denominator accumulated in 64-bit.
Var softmax(Var x);

/// Sum of all elements -> scalar [1].
Var sum_all(Var x);

/// Weighted reduction sum(x*w) -> scalar [1], w a fixed (non-differentiated)
/// tensor of the same shape. Used to build scalar probes of full Jacobians.
Var weighted_sum(Var x, Tensor w);

/// Means over consecutive row groups: [R×C] -> [R/group_size × C].
Var mean_pool_rows(Var x, int64_t group_size);

/// Row lookup into a [V×E] table: out[i,:] = table[ids[i],:].
Var embedding_lookup(Var table, std::vector<int64_t> ids);

/// Mean (optionally class-weighted mean) of -log softmax(logits)[label]
/// over the batch. logits [B×K]; labels in [0,K); class_weights length K.
Var cross_entropy(Var logits, std::vector<int64_t> labels,
                  const std::vector<float>* class_weights = nullptr);

/// Fused windowed multi-head self-attention over pre-partitioned tokens.
///
/// x: [NW·T × E] with T = tokens_per_window and windows stored as consecutive
/// row blocks. Computes per window n and head h:
///   Q = x·W_q + b_q (and K, V alike), split into H slices of width D,
///   S = Q_h·K_hᵀ/sqrt(D) + bias_h,  P = softmax(S) rowwise,  O_h = P·V_h,
/// and returns the concatenated head outputs [NW·T × H·D] — the input of the
/// downstream output projection (and the capture point for head statistics).
///
/// rel_bias, when a valid Var, is an [R_b × H] table added per head as
/// bias_h[i,j] = rel_bias[rel_index[i·T+j], h]; pass an invalid Var and an
/// empty rel_index to disable it. Attention probabilities use a 64-bit
/// softmax; matmul accumulation is 32-bit like `matmul`.
Var window_msa(Var x, Var w_q, Var b_q, Var w_k, Var b_k, Var w_v, Var b_v,
               Var rel_bias, std::vector<int64_t> rel_index,
               int64_t tokens_per_window, int64_t num_heads);

}  // namespace skewprune::ops
