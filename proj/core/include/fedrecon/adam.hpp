#pragma once

#include <cstdint>
#include <vector>

#include "fedrecon/param_set.hpp"

namespace fedrecon {

struct AdamState {
  std::uint64_t step = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  // Zero moments shaped like `params`.
  static AdamState for_params(const ParamSet& params);
  void reset();
};

// One bias-corrected Adam update on every entry of `params`, then zeroes the
// grads. Throws naming the first parameter without a gradient.
void adam_step(ParamSet& params, AdamState& state, double lr);

}  // namespace fedrecon
