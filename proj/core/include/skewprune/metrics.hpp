#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "skewprune/model.hpp"

namespace skewprune {

// Exact-match fraction. Throws ArgumentError on length mismatch or emptiness.
double accuracy(const std::vector<int64_t>& preds, const std::vector<int64_t>& labels);

// Unweighted mean over the K classes of per-class F1 computed from integer
// confusion counts as 2*TP / (2*TP + FP + FN); a class absent from both
// predictions and labels contributes 0.
double macro_f1(const std::vector<int64_t>& preds, const std::vector<int64_t>& labels,
                int64_t num_classes);

// Same per-class F1, averaged with weights proportional to label support.
double weighted_f1(const std::vector<int64_t>& preds, const std::vector<int64_t>& labels,
                   int64_t num_classes);

// Model cost snapshot; size_mb is measured on an actual serialization.
struct MetricsRecord {
  int64_t params = 0;
  double gflops = 0.0;    // forward cost of one image / 1e9
  double memory_mb = 0.0; // in-memory parameter bytes / 2^20
  double size_mb = 0.0;   // serialized checkpoint bytes / 2^20
};

MetricsRecord cost_report(const Model& m);

struct ScoreRecord {
  double accuracy = 0.0;
  double f1 = 0.0;
};

// Before/after comparison: absolute values, deltas, and after/before ratios.
struct EffectsReport {
  MetricsRecord cost_before;
  MetricsRecord cost_after;
  ScoreRecord score_before;
  ScoreRecord score_after;
};

// Aligned text table, one metric per row, fixed row order, four-decimal
// values; ratio column shows "-" when the before value is zero.
std::string format_effects(const EffectsReport& r);

}  // namespace skewprune
