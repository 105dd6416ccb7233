#include "theragan/diffnet/adam.hpp"

#include <cmath>

#include "theragan/error.hpp"

namespace theragan::diffnet {

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, const AdamConfig& cfg) {
  if (params.size() != grads.size()) throw Error(ErrorKind::ShapeMismatch, "adam_step: params and grads differ in size");
  if (state.m.size() != params.size()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
    state.step = 0;
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grads[i];
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grads[i] * grads[i];
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    params[i] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
  }
}

void Adam::step(ParamStore& params) {
  auto& entries = params.entries();
  states_.resize(entries.size());
  for (std::size_t i = 0; i < entries.size(); ++i) {
    adam_step(entries[i].value.data, entries[i].grad.data, states_[i], cfg_);
  }
  params.zero_grads();
}

}  // namespace theragan::diffnet
