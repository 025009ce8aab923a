#pragma once

// Shared test utilities: random tensors and a central-finite-difference
// gradient checker used by both the unit suites and the acceptance runner.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "skewprune/graph.hpp"
#include "skewprune/ops.hpp"
#include "skewprune/rng.hpp"
#include "skewprune/tensor.hpp"

namespace testutil {

inline skewprune::Tensor random_tensor(std::vector<int64_t> shape, skewprune::Rng& rng,
                                       double scale = 0.1) {
  skewprune::Tensor t(std::move(shape));
  for (auto& v : t.data) v = static_cast<float>(rng.uniform(-scale, scale));
  return t;
}

struct GradCheck {
  bool ok = true;
  double max_err = 0.0;       // worst |analytic - fd| beyond tolerance scale
  std::string detail;         // first offending coordinate, for diagnostics
};

/// Checks d(probe·f(inputs))/d(inputs) against central finite differences.
/// `build` constructs the op under test from leaf Vars (one per input, in
/// order). The probe is a fixed random weighting of the output so the check
/// exercises the full Jacobian rather than its row sums.
inline GradCheck grad_check(
    const std::function<skewprune::Var(skewprune::Graph&, const std::vector<skewprune::Var>&)>&
        build,
    std::vector<skewprune::Tensor> inputs, uint64_t probe_seed, double step = 1e-3,
    double rtol = 1e-2, double atol = 1e-3) {
  using namespace skewprune;

  Tensor probe;
  const auto loss_value = [&](const std::vector<Tensor>& ins) -> double {
    Graph g;
    g.set_grad_enabled(false);
    std::vector<Var> leaves;
    leaves.reserve(ins.size());
    for (const Tensor& t : ins) leaves.push_back(g.leaf(t, true));
    Var out = build(g, leaves);
    Var loss = ops::weighted_sum(out, probe);
    return g.value(loss).data[0];
  };

  // Analytic pass (also fixes the probe from the output shape).
  std::vector<Tensor> analytic;
  {
    Graph g;
    std::vector<Var> leaves;
    for (const Tensor& t : inputs) leaves.push_back(g.leaf(t, true));
    Var out = build(g, leaves);
    Rng prng(probe_seed);
    probe = random_tensor(g.value(out).shape, prng, 1.0);
    Var loss = ops::weighted_sum(out, probe);
    g.backward(loss);
    for (Var v : leaves) analytic.push_back(g.grad(v));
  }

  GradCheck result;
  for (size_t which = 0; which < inputs.size(); ++which) {
    for (size_t i = 0; i < inputs[which].data.size(); ++i) {
      const float saved = inputs[which].data[i];
      inputs[which].data[i] = static_cast<float>(saved + step);
      const double lp = loss_value(inputs);
      inputs[which].data[i] = static_cast<float>(saved - step);
      const double lm = loss_value(inputs);
      inputs[which].data[i] = saved;
      const double fd = (lp - lm) / (2.0 * step);
      const double an = analytic[which].data[i];
      const double err = std::abs(an - fd);
      const double tol = atol + rtol * std::max(std::abs(an), std::abs(fd));
      if (err > tol && result.ok) {
        result.ok = false;
        result.detail = "input " + std::to_string(which) + " element " + std::to_string(i) +
                        ": analytic " + std::to_string(an) + " vs fd " + std::to_string(fd);
      }
      result.max_err = std::max(result.max_err, err);
    }
  }
  return result;
}

}  // namespace testutil
