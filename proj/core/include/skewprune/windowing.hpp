#pragma once

#include <cstdint>
#include <vector>

namespace skewprune::windowing {

// Token grids are square, stored row-major as rows of a [grid² × channels]
// matrix. All helpers return row permutations for ops::permute_rows.

/// Window partition combined with an optional cyclic up-left shift: output
/// rows enumerate w×w windows of the shifted grid (windows row-major, tokens
/// row-major inside each window); entry i names the source row in the
/// unshifted grid. grid must be divisible by w; 0 <= shift < w.
std::vector<int64_t> window_perm(int64_t grid, int64_t w, int64_t shift);

/// Inverse of a bijective permutation.
std::vector<int64_t> inverse_perm(const std::vector<int64_t>& perm);

/// Repeats a per-image row permutation across a batch with per-image offsets.
std::vector<int64_t> batch_perm(const std::vector<int64_t>& per_image, int64_t batch);

/// Relative position index for a w×w window: w⁴ entries mapping each (query,
/// key) token pair to a row of the (2w−1)² relative position bias table.
std::vector<int64_t> relative_position_index(int64_t w);

/// Patch-merge gather: orders rows so each 2×2 cell's tokens become four
/// consecutive rows (top-left, top-right, bottom-left, bottom-right); a
/// reshape to [grid²/4 × 4·channels] then concatenates their features.
/// grid must be even.
std::vector<int64_t> merge_perm(int64_t grid);

}  // namespace skewprune::windowing
