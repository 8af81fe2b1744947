#include "fedrecon/adam.hpp"

#include <cmath>

#include "fedrecon/error.hpp"

namespace fedrecon {

AdamState AdamState::for_params(const ParamSet& params) {
  AdamState state;
  for (const auto& [name, t] : params) {
    state.first_moment.emplace_back(t.numel(), 0.0);
    state.second_moment.emplace_back(t.numel(), 0.0);
  }
  return state;
}

void AdamState::reset() {
  step = 0;
  for (auto& m : first_moment) std::fill(m.begin(), m.end(), 0.0);
  for (auto& v : second_moment) std::fill(v.begin(), v.end(), 0.0);
}

void adam_step(ParamSet& params, AdamState& state, double lr) {
  if (state.first_moment.size() != params.size() || state.second_moment.size() != params.size()) {
    throw Error(ErrorKind::kShapeMismatch, "Adam state tracks " + std::to_string(state.first_moment.size()) +
                                               " tensors, parameter set has " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& [name, t] = params.entries()[i];
    if (!t.has_grad()) throw Error(ErrorKind::kMissingGradient, "parameter " + name + " has no gradient");
    if (state.first_moment[i].size() != t.numel() || state.second_moment[i].size() != t.numel()) {
      throw Error(ErrorKind::kShapeMismatch, "Adam moments do not match parameter " + name);
    }
  }

  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(state.beta1, t);
  const double correction2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    ad::Tensor tensor = params.entries()[i].second;
    auto grad = tensor.grad();
    auto value = tensor.mutable_data();
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    for (std::size_t j = 0; j < value.size(); ++j) {
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * grad[j];
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * grad[j] * grad[j];
      const double m_hat = m[j] / correction1;
      const double v_hat = v[j] / correction2;
      value[j] -= lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
    tensor.zero_grad();
  }
}

}  // namespace fedrecon
