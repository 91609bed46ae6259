// SPDX-License-Identifier: Apache-2.0
//
// Central finite-difference gradient checker.

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "binsip/tensor.hpp"

namespace binsip::ag {

// Builds the graph and returns a scalar loss; called repeatedly with
// perturbed inputs, so it must not keep state across calls.
using ScalarFn = std::function<Tensor(Tape&, std::vector<Tensor>&)>;

struct GradCheckOptions {
  double h = 1e-5;
  // Coordinates with |x| < nudge are moved to +nudge before checking, keeping
  // the evaluation away from ReLU kinks.
  double nudge = 0.0;
  // Check at most this many coordinates per input (0 = all), stepping evenly.
  std::int64_t max_coords_per_input = 0;
};

// Returns max over checked coordinates of |analytic - numeric| / max(1, |numeric|).
inline double grad_check(const ScalarFn& f, std::vector<Tensor> inputs,
                         const GradCheckOptions& opts = {}) {
  if (opts.nudge > 0.0) {
    for (auto& in : inputs) {
      for (auto& v : in.value()) {
        if (std::abs(v) < opts.nudge) v = opts.nudge;
      }
    }
  }

  // Analytic pass.
  std::vector<Tensor> analytic_inputs;
  analytic_inputs.reserve(inputs.size());
  for (const auto& in : inputs) {
    analytic_inputs.push_back(Tensor::from(in.shape(), in.value(), true, in.name()));
  }
  Tape tape(true);
  Tensor loss = f(tape, analytic_inputs);
  tape.backward(loss);

  auto eval = [&](const std::vector<Tensor>& pts) {
    std::vector<Tensor> frozen;
    frozen.reserve(pts.size());
    for (const auto& in : pts) frozen.push_back(Tensor::from(in.shape(), in.value(), false));
    Tape t(false);
    return f(t, frozen).item();
  };

  double max_rel_err = 0.0;
  for (std::size_t which = 0; which < inputs.size(); ++which) {
    const std::int64_t n = inputs[which].size();
    std::int64_t stride = 1;
    if (opts.max_coords_per_input > 0 && n > opts.max_coords_per_input)
      stride = n / opts.max_coords_per_input;
    for (std::int64_t c = 0; c < n; c += stride) {
      const double orig = inputs[which].value()[static_cast<std::size_t>(c)];
      inputs[which].value()[static_cast<std::size_t>(c)] = orig + opts.h;
      const double fp = eval(inputs);
      inputs[which].value()[static_cast<std::size_t>(c)] = orig - opts.h;
      const double fm = eval(inputs);
      inputs[which].value()[static_cast<std::size_t>(c)] = orig;
      const double numeric = (fp - fm) / (2.0 * opts.h);
      const double analytic = analytic_inputs[which].grad()[static_cast<std::size_t>(c)];
      const double rel = std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric));
      max_rel_err = std::max(max_rel_err, rel);
    }
  }
  return max_rel_err;
}

}  // namespace binsip::ag
