#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "octaquant/nn/tensor.hpp"

namespace octaquant::nn {

struct AdamConfig {
  double learning_rate = 1e-4;
  double epsilon = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  void validate() const;
};

/// Optimizer state for one training run. Moment buffers are sized lazily on
/// the first step and must keep matching the parameter shapes afterwards.
struct AdamState {
  AdamConfig config;
  std::uint64_t step_count = 0;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;

  explicit AdamState(AdamConfig cfg = {}) : config(cfg) { config.validate(); }
};

/// One bias-corrected Adam update, epsilon added to sqrt(v_hat). Throws
/// ComputeError naming the parameter when a gradient is not finite; no
/// parameter is modified in that case.
void adam_step(std::span<NamedTensor> params, std::span<const Tensor> grads, AdamState& state);

}  // namespace octaquant::nn
