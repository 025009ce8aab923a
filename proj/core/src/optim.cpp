#include "skewprune/optim.hpp"

#include <cmath>

#include "skewprune/errors.hpp"

namespace skewprune {

void adam_step(Tensor& param, const Tensor& grad, AdamState& state, const AdamConfig& cfg) {
  require_same_shape(param, grad, "adam_step");
  if (state.t == 0 && state.m.data.empty()) {
    state.m = Tensor::zeros(param.shape);
    state.v = Tensor::zeros(param.shape);
  }
  require_same_shape(param, state.m, "adam_step moments");
  state.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (size_t i = 0; i < param.data.size(); ++i) {
    const double g = grad.data[i];
    const double m = cfg.beta1 * state.m.data[i] + (1.0 - cfg.beta1) * g;
    const double v = cfg.beta2 * state.v.data[i] + (1.0 - cfg.beta2) * g * g;
    state.m.data[i] = static_cast<float>(m);
    state.v.data[i] = static_cast<float>(v);
    const double mhat = m / bc1;
    const double vhat = v / bc2;
    param.data[i] = static_cast<float>(param.data[i] - cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
  }
}

void Adam::step(const std::string& name, Tensor& param, const Tensor& grad) {
  adam_step(param, grad, states_[name], cfg_);
}

}  // namespace skewprune
