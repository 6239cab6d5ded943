#pragma once

// Central finite-difference oracle in double precision. Independent of the
// tape: it only evaluates the scalar loss at perturbed inputs.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "octaquant/nn/tape.hpp"
#include "octaquant/random.hpp"

namespace octaquant::testing {

using LossFn = std::function<nn::Var(nn::Tape<double>&, const std::vector<nn::Var>&)>;

struct GradCheckResult {
  double worst_relative_error = 0.0;
  std::size_t probes = 0;
  std::string worst_location;
};

/// |a - n| / max(|a|, |n|, floor). The floor keeps coordinates whose true
/// gradient is numerically zero from dividing noise by noise.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

inline double evaluate(const LossFn& fn, const std::vector<nn::Tensor64>& inputs) {
  nn::Tape<double> tape;
  std::vector<nn::Var> vars;
  for (const auto& t : inputs) vars.push_back(tape.constant(t));
  return tape.value(fn(tape, vars))[0];
}

inline std::vector<nn::Tensor64> analytic_gradients(const LossFn& fn, const std::vector<nn::Tensor64>& inputs) {
  nn::Tape<double> tape;
  std::vector<nn::Var> vars;
  for (const auto& t : inputs) vars.push_back(tape.variable(t));
  tape.backward(fn(tape, vars));
  std::vector<nn::Tensor64> grads;
  for (nn::Var v : vars) grads.push_back(tape.grad(v));
  return grads;
}

/// Runs at least `probes_per_input` probes on every input: all coordinates
/// first when the input is small, then random coordinates, each with a step
/// jittered in [0.5, 2) x `step`. Returns one result per input.
inline std::vector<GradCheckResult> check_gradients(const LossFn& fn, std::vector<nn::Tensor64> inputs,
                                                    std::size_t probes_per_input, std::uint64_t seed,
                                                    double step = 1e-6) {
  const std::vector<nn::Tensor64> grads = analytic_gradients(fn, inputs);
  std::vector<GradCheckResult> results(inputs.size());
  Rng rng(seed);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const std::size_t n = inputs[i].size();
    std::vector<std::size_t> coords;
    if (n <= probes_per_input) {
      for (std::size_t j = 0; j < n; ++j) coords.push_back(j);
    }
    while (coords.size() < probes_per_input) coords.push_back(static_cast<std::size_t>(rng.next() % n));
    for (std::size_t j : coords) {
      const double h = step * rng.uniform(0.5, 2.0);
      const double saved = inputs[i][j];
      inputs[i][j] = saved + h;
      const double up = evaluate(fn, inputs);
      inputs[i][j] = saved - h;
      const double down = evaluate(fn, inputs);
      inputs[i][j] = saved;
      const double numeric = (up - down) / (2 * h);
      const double err = relative_error(grads[i][j], numeric);
      results[i].probes += 1;
      if (err > results[i].worst_relative_error) {
        results[i].worst_relative_error = err;
        results[i].worst_location = "input " + std::to_string(i) + " coord " + std::to_string(j) + " analytic " +
                                    std::to_string(grads[i][j]) + " numeric " + std::to_string(numeric);
      }
    }
  }
  return results;
}

}  // namespace octaquant::testing
