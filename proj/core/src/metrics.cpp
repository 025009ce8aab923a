#include "skewprune/metrics.hpp"

#include <cstdio>

#include "skewprune/checkpoint.hpp"
#include "skewprune/errors.hpp"

namespace skewprune {

namespace {

struct Confusion {
  std::vector<int64_t> tp, fp, fn;
};

Confusion count_confusion(const std::vector<int64_t>& preds, const std::vector<int64_t>& labels,
                          int64_t k) {
  if (preds.size() != labels.size()) {
    throw ArgumentError("metrics: " + std::to_string(preds.size()) + " predictions for " +
                        std::to_string(labels.size()) + " labels");
  }
  if (preds.empty()) throw ArgumentError("metrics: empty prediction list");
  if (k < 1) throw ArgumentError("metrics: need at least one class");
  Confusion c;
  c.tp.assign(static_cast<size_t>(k), 0);
  c.fp.assign(static_cast<size_t>(k), 0);
  c.fn.assign(static_cast<size_t>(k), 0);
  for (size_t i = 0; i < preds.size(); ++i) {
    const int64_t p = preds[i], l = labels[i];
    if (p < 0 || p >= k || l < 0 || l >= k) {
      throw ArgumentError("metrics: class id out of range at position " + std::to_string(i));
    }
    if (p == l) {
      ++c.tp[static_cast<size_t>(p)];
    } else {
      ++c.fp[static_cast<size_t>(p)];
      ++c.fn[static_cast<size_t>(l)];
    }
  }
  return c;
}

double class_f1(int64_t tp, int64_t fp, int64_t fn) {
  const int64_t denom = 2 * tp + fp + fn;
  return denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

}  // namespace

double accuracy(const std::vector<int64_t>& preds, const std::vector<int64_t>& labels) {
  if (preds.size() != labels.size()) {
    throw ArgumentError("metrics: " + std::to_string(preds.size()) + " predictions for " +
                        std::to_string(labels.size()) + " labels");
  }
  if (preds.empty()) throw ArgumentError("metrics: empty prediction list");
  int64_t hits = 0;
  for (size_t i = 0; i < preds.size(); ++i) hits += preds[i] == labels[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

double macro_f1(const std::vector<int64_t>& preds, const std::vector<int64_t>& labels,
                int64_t num_classes) {
  const Confusion c = count_confusion(preds, labels, num_classes);
  double sum = 0.0;
  for (int64_t k = 0; k < num_classes; ++k) {
    sum += class_f1(c.tp[static_cast<size_t>(k)], c.fp[static_cast<size_t>(k)],
                    c.fn[static_cast<size_t>(k)]);
  }
  return sum / static_cast<double>(num_classes);
}

double weighted_f1(const std::vector<int64_t>& preds, const std::vector<int64_t>& labels,
                   int64_t num_classes) {
  const Confusion c = count_confusion(preds, labels, num_classes);
  double sum = 0.0;
  for (int64_t k = 0; k < num_classes; ++k) {
    const int64_t support =
        c.tp[static_cast<size_t>(k)] + c.fn[static_cast<size_t>(k)];  // label count
    sum += static_cast<double>(support) * class_f1(c.tp[static_cast<size_t>(k)],
                                                   c.fp[static_cast<size_t>(k)],
                                                   c.fn[static_cast<size_t>(k)]);
  }
  return sum / static_cast<double>(labels.size());
}

MetricsRecord cost_report(const Model& m) {
  MetricsRecord r;
  r.params = m.count_params();
  r.gflops = static_cast<double>(m.count_flops(1)) / 1e9;
  r.memory_mb = static_cast<double>(m.memory_footprint_bytes()) / 1048576.0;
  r.size_mb = static_cast<double>(checkpoint_size_bytes(m)) / 1048576.0;
  return r;
}

std::string format_effects(const EffectsReport& r) {
  std::string out = "metric            before      after      delta      ratio\n";
  char buf[160];
  auto row = [&](const char* name, double before, double after) {
    char ratio[24];
    if (before == 0.0) {
      std::snprintf(ratio, sizeof ratio, "%10s", "-");
    } else {
      std::snprintf(ratio, sizeof ratio, "%10.4f", after / before);
    }
    std::snprintf(buf, sizeof buf, "%-14s %10.4f %10.4f %10.4f %s\n", name, before, after,
                  after - before, ratio);
    out += buf;
  };
  row("gflops", r.cost_before.gflops, r.cost_after.gflops);
  row("parameters_m", static_cast<double>(r.cost_before.params) / 1e6,
      static_cast<double>(r.cost_after.params) / 1e6);
  row("memory_mb", r.cost_before.memory_mb, r.cost_after.memory_mb);
  row("size_mb", r.cost_before.size_mb, r.cost_after.size_mb);
  row("accuracy", r.score_before.accuracy, r.score_after.accuracy);
  row("f1", r.score_before.f1, r.score_after.f1);
  return out;
}

}  // namespace skewprune
