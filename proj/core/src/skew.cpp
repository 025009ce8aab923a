#include "skewprune/skew.hpp"

#include <cmath>
#include <cstdio>

#include "skewprune/errors.hpp"

namespace skewprune {

double skewness(const NormVector& v) {
  if (v.size() < 2) {
    throw ArgumentError("skewness needs at least 2 values, got " + std::to_string(v.size()));
  }
  // Zero variance means every value is equal; test that directly so constant
  // vectors score exactly 0 even when the accumulated mean would round.
  bool constant = true;
  for (const double x : v) constant = constant && x == v.front();
  if (constant) return 0.0;
  const double n = static_cast<double>(v.size());
  double sum = 0.0;
  for (const double x : v) sum += x;
  const double mean = sum / n;
  double m2 = 0.0, m3 = 0.0;
  for (const double x : v) {
    const double d = x - mean;
    m2 += d * d;
    m3 += d * d * d;
  }
  m2 /= n;
  m3 /= n;
  if (m2 == 0.0) return 0.0;
  return m3 / std::pow(m2, 1.5);
}

namespace {

// Shared walk over [instances x T x inner] captures: fills `out[slot][pos]`
// with the L2 norm over each slot's channel range, per the selector.
std::vector<NormVector> norms_over(const Tensor& cap, int64_t slots, int64_t slot_stride,
                                   int64_t slot_width, NormSelector sel) {
  const int64_t instances = cap.shape[0], t = cap.shape[1];
  const int64_t row_width = cap.rank() == 4 ? cap.shape[2] * cap.shape[3] : cap.shape[2];
  const int64_t use = sel == NormSelector::First ? 1 : instances;
  std::vector<NormVector> out(static_cast<size_t>(slots), NormVector(static_cast<size_t>(t), 0.0));
  for (int64_t s = 0; s < slots; ++s) {
    for (int64_t i = 0; i < t; ++i) {
      double acc = 0.0;
      for (int64_t n = 0; n < use; ++n) {
        const float* base = cap.data.data() + (n * t + i) * row_width + s * slot_stride;
        double sq = 0.0;
        for (int64_t k = 0; k < slot_width; ++k) {
          const double x = base[k];
          sq += x * x;
        }
        acc += std::sqrt(sq);
      }
      out[static_cast<size_t>(s)][static_cast<size_t>(i)] = acc / static_cast<double>(use);
    }
  }
  return out;
}

}  // namespace

std::vector<NormVector> extract_norms_msa(const Tensor& a, NormSelector sel) {
  if (a.data.empty()) throw StateError("attention capture missing");
  if (a.rank() != 4) {
    throw DimensionError("attention capture: expected [instances x T x H x D], got " +
                         a.shape_str());
  }
  return norms_over(a, a.shape[2], a.shape[3], a.shape[3], sel);
}

std::vector<NormVector> extract_norms_mlp(const Tensor& z, int64_t group_count,
                                          NormSelector sel) {
  if (z.data.empty()) throw StateError("intermediate capture missing");
  if (z.rank() != 3) {
    throw DimensionError("intermediate capture: expected [instances x T x C], got " +
                         z.shape_str());
  }
  if (group_count < 1 || z.shape[2] % group_count != 0) {
    throw ConfigError("channel count " + std::to_string(z.shape[2]) +
                      " not divisible into " + std::to_string(group_count) + " groups");
  }
  const int64_t width = z.shape[2] / group_count;
  return norms_over(z, group_count, width, width, sel);
}

SkewReport analyze_capture(const ActivationCapture& cap, BlockId block,
                           const BlockPruneState& state, int64_t group_size, NormSelector sel,
                           int64_t calib_batch_id) {
  SkewReport rep;
  rep.block = block;
  rep.revision = state.revision;
  rep.calib_batch_id = calib_batch_id;
  if (!state.msa_is_identity) {
    const auto norms = extract_norms_msa(cap.a, sel);
    for (size_t h = 0; h < norms.size(); ++h) {
      rep.head_skews.push_back({static_cast<int64_t>(h), skewness(norms[h])});
    }
  }
  if (!state.mlp_is_identity) {
    if (cap.z.data.empty()) throw StateError("intermediate capture missing");
    const int64_t c = cap.z.shape[2];
    if (group_size < 1 || c % group_size != 0) {
      throw ConfigError("channel count " + std::to_string(c) +
                        " not divisible by group size " + std::to_string(group_size));
    }
    rep.group_size = group_size;
    rep.group_count = c / group_size;
    const auto norms = extract_norms_mlp(cap.z, rep.group_count, sel);
    for (size_t g = 0; g < norms.size(); ++g) {
      rep.group_skews.push_back({static_cast<int64_t>(g), skewness(norms[g])});
    }
  }
  return rep;
}

PruneDecision decide(const SkewReport& report) {
  PruneDecision d;
  d.block = report.block;
  d.revision = report.revision;
  d.num_heads = static_cast<int64_t>(report.head_skews.size());
  d.num_groups = static_cast<int64_t>(report.group_skews.size());
  for (const HeadSkew& h : report.head_skews) {
    if (h.skew <= 0.0) d.heads_to_prune.push_back(h.id);
  }
  for (const GroupSkew& g : report.group_skews) {
    if (g.skew <= 0.0) d.groups_to_prune.push_back(g.id);
  }
  return d;
}

std::string format_skew_report(const SkewReport& report) {
  std::string out;
  char buf[160];
  std::snprintf(buf, sizeof buf, "block %lld.%lld revision %lld calibration_batch %lld\n",
                static_cast<long long>(report.block.stage),
                static_cast<long long>(report.block.block),
                static_cast<long long>(report.revision),
                static_cast<long long>(report.calib_batch_id));
  out += buf;
  for (const HeadSkew& h : report.head_skews) {
    std::snprintf(buf, sizeof buf, "head %lld skew %.6f decision %s\n",
                  static_cast<long long>(h.id), h.skew, h.skew <= 0.0 ? "prune" : "keep");
    out += buf;
  }
  std::snprintf(buf, sizeof buf, "groups %lld size %lld\n",
                static_cast<long long>(report.group_count),
                static_cast<long long>(report.group_size));
  out += buf;
  for (const GroupSkew& g : report.group_skews) {
    std::snprintf(buf, sizeof buf, "group %lld skew %.6f decision %s\n",
                  static_cast<long long>(g.id), g.skew, g.skew <= 0.0 ? "prune" : "keep");
    out += buf;
  }
  return out;
}

}  // namespace skewprune
