#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "skewprune/tensor.hpp"

namespace skewprune {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Per-parameter Adam moments. t counts completed steps for bias correction.
struct AdamState {
  Tensor m;
  Tensor v;
  int64_t t = 0;
};

/// One bias-corrected Adam update in place; initializes state on first use.
/// Deterministic: identical (param, grad, state) inputs give identical
/// outputs bit for bit. Throws a dimension error on shape mismatch.
void adam_step(Tensor& param, const Tensor& grad, AdamState& state, const AdamConfig& cfg);

/// Adam over a set of named parameters. State is created lazily per name and
/// dropped wholesale by reset() — pruning surgery re-initializes moments
/// rather than trying to slice them.
class Adam {
 public:
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

  void step(const std::string& name, Tensor& param, const Tensor& grad);
  void reset() { states_.clear(); }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  std::map<std::string, AdamState> states_;
};

}  // namespace skewprune
