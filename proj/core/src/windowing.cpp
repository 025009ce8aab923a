#include "skewprune/windowing.hpp"

#include <string>

#include "skewprune/errors.hpp"

namespace skewprune::windowing {

std::vector<int64_t> window_perm(int64_t grid, int64_t w, int64_t shift) {
  if (w < 1 || grid < 1 || grid % w != 0) {
    throw DimensionError("window_perm: grid " + std::to_string(grid) +
                         " not divisible into windows of " + std::to_string(w));
  }
  if (shift < 0 || shift >= w) {
    throw ArgumentError("window_perm: shift " + std::to_string(shift) + " outside [0," +
                        std::to_string(w) + ")");
  }
  const int64_t per_side = grid / w;
  std::vector<int64_t> perm;
  perm.reserve(static_cast<size_t>(grid * grid));
  for (int64_t wr = 0; wr < per_side; ++wr) {
    for (int64_t wc = 0; wc < per_side; ++wc) {
      for (int64_t r = 0; r < w; ++r) {
        for (int64_t c = 0; c < w; ++c) {
          const int64_t src_r = (wr * w + r + shift) % grid;
          const int64_t src_c = (wc * w + c + shift) % grid;
          perm.push_back(src_r * grid + src_c);
        }
      }
    }
  }
  return perm;
}

std::vector<int64_t> inverse_perm(const std::vector<int64_t>& perm) {
  const int64_t n = static_cast<int64_t>(perm.size());
  std::vector<int64_t> inv(perm.size(), -1);
  for (int64_t i = 0; i < n; ++i) {
    const int64_t p = perm[static_cast<size_t>(i)];
    if (p < 0 || p >= n || inv[static_cast<size_t>(p)] != -1) {
      throw ArgumentError("inverse_perm: input is not a permutation of [0," + std::to_string(n) +
                          ")");
    }
    inv[static_cast<size_t>(p)] = i;
  }
  return inv;
}

std::vector<int64_t> batch_perm(const std::vector<int64_t>& per_image, int64_t batch) {
  const int64_t n = static_cast<int64_t>(per_image.size());
  std::vector<int64_t> out;
  out.reserve(static_cast<size_t>(n * batch));
  for (int64_t b = 0; b < batch; ++b) {
    for (const int64_t p : per_image) out.push_back(b * n + p);
  }
  return out;
}

std::vector<int64_t> relative_position_index(int64_t w) {
  if (w < 1) throw ArgumentError("relative_position_index: window side must be >= 1");
  const int64_t span = 2 * w - 1;
  const int64_t t = w * w;
  std::vector<int64_t> idx;
  idx.reserve(static_cast<size_t>(t * t));
  for (int64_t qi = 0; qi < t; ++qi) {
    const int64_t qr = qi / w, qc = qi % w;
    for (int64_t ki = 0; ki < t; ++ki) {
      const int64_t kr = ki / w, kc = ki % w;
      idx.push_back((qr - kr + w - 1) * span + (qc - kc + w - 1));
    }
  }
  return idx;
}

std::vector<int64_t> merge_perm(int64_t grid) {
  if (grid < 2 || grid % 2 != 0) {
    throw DimensionError("merge_perm: grid side " + std::to_string(grid) + " must be even");
  }
  std::vector<int64_t> perm;
  perm.reserve(static_cast<size_t>(grid * grid));
  for (int64_t r = 0; r < grid; r += 2) {
    for (int64_t c = 0; c < grid; c += 2) {
      perm.push_back(r * grid + c);
      perm.push_back(r * grid + c + 1);
      perm.push_back((r + 1) * grid + c);
      perm.push_back((r + 1) * grid + c + 1);
    }
  }
  return perm;
}

}  // namespace skewprune::windowing
