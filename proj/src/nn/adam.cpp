#include "octaquant/nn/adam.hpp"

#include <cmath>
#include <string>

#include "octaquant/error.hpp"

namespace octaquant::nn {

void AdamConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ConfigError("adam: learning rate must be >= 0");
  if (!(epsilon > 0.0)) throw ConfigError("adam: epsilon must be positive");
  if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) {
    throw ConfigError("adam: betas must lie in (0,1)");
  }
}

void adam_step(std::span<NamedTensor> params, std::span<const Tensor> grads, AdamState& state) {
  if (params.size() != grads.size()) {
    throw ShapeError("adam: " + std::to_string(params.size()) + " parameters but " + std::to_string(grads.size()) +
                     " gradients");
  }
  if (state.first_moment.empty()) {
    for (const NamedTensor& p : params) {
      state.first_moment.emplace_back(p.value.shape());
      state.second_moment.emplace_back(p.value.shape());
    }
  }
  if (state.first_moment.size() != params.size()) throw ShapeError("adam: state tracks a different parameter set");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].shape() != params[i].value.shape() || state.first_moment[i].shape() != params[i].value.shape()) {
      throw ShapeError("adam: shape mismatch for parameter '" + params[i].name + "': value " +
                       to_string(params[i].value.shape()) + ", gradient " + to_string(grads[i].shape()));
    }
    if (!grads[i].all_finite()) throw ComputeError("adam: non-finite gradient for parameter '" + params[i].name + "'");
  }

  const AdamConfig& c = state.config;
  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  const double correction1 = 1.0 - std::pow(c.beta1, t);
  const double correction2 = 1.0 - std::pow(c.beta2, t);
  const auto b1 = static_cast<float>(c.beta1);
  const auto b2 = static_cast<float>(c.beta2);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& value = params[i].value;
    Tensor& m = state.first_moment[i];
    Tensor& v = state.second_moment[i];
    const Tensor& g = grads[i];
    for (std::size_t j = 0; j < value.size(); ++j) {
      m[j] = b1 * m[j] + (1.0f - b1) * g[j];
      v[j] = b2 * v[j] + (1.0f - b2) * g[j] * g[j];
      const double m_hat = m[j] / correction1;
      const double v_hat = v[j] / correction2;
      value[j] -= static_cast<float>(c.learning_rate * m_hat / (std::sqrt(v_hat) + c.epsilon));
    }
  }
}

}  // namespace octaquant::nn
