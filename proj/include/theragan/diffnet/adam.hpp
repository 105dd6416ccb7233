#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "theragan/diffnet/network.hpp"

namespace theragan::diffnet {

struct AdamConfig {
  double learning_rate = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::size_t step = 0;
};

// One bias-corrected Adam update of `params` in place.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, const AdamConfig& cfg);

// Adam over every array of a ParamStore; consumes and clears the gradients.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}
  void step(ParamStore& params);
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  std::vector<AdamState> states_;
};

}  // namespace theragan::diffnet
