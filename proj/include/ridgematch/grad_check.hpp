#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "ridgematch/autograd.hpp"
#include "ridgematch/error.hpp"
#include "ridgematch/tensor.hpp"

namespace ridgematch {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

// Compares the tape gradient of a scalar-valued graph against central finite
// differences, elementwise over every input. `build` receives a fresh tape and
// one leaf per input and returns a 1×1 output.
//
// The numeric side uses the fourth-order central stencil
//   (-f(x+2h) + 8f(x+h) - 8f(x-h) + f(x-2h)) / 12h,
// whose O(h⁴) truncation keeps the relative error meaningful for small
// gradient entries.
template <typename Build>
GradCheckResult grad_check(Build&& build, std::vector<Matrix<double>> inputs, double eps = 1e-4) {
  if (eps < 1e-7 || eps > 1e-4) throw ConfigError("grad_check: eps must be in [1e-7, 1e-4]");

  auto evaluate = [&](bool with_grad, std::vector<Matrix<double>>* grads) {
    Tape<double> tape;
    std::vector<Var> leaves;
    leaves.reserve(inputs.size());
    for (const auto& m : inputs) leaves.push_back(tape.leaf(m, with_grad));
    Var out = build(tape, leaves);
    const double f = tape.value(out)[0];
    if (with_grad) {
      tape.backward(out);
      for (Var v : leaves) grads->push_back(tape.grad(v));
    }
    return f;
  };

  std::vector<Matrix<double>> analytic;
  const double f0 = evaluate(true, &analytic);
  if (!std::isfinite(f0)) throw NumericError("grad_check: non-finite output at the base point");

  GradCheckResult result;
  for (std::size_t n = 0; n < inputs.size(); ++n) {
    for (std::size_t i = 0; i < inputs[n].size(); ++i) {
      const double x0 = inputs[n][i];
      double f[4];
      const double offsets[4] = {2.0, 1.0, -1.0, -2.0};
      for (int s = 0; s < 4; ++s) {
        inputs[n][i] = x0 + offsets[s] * eps;
        f[s] = evaluate(false, nullptr);
        if (!std::isfinite(f[s])) {
          inputs[n][i] = x0;
          throw NumericError("grad_check: non-finite output perturbing input " +
                             std::to_string(n) + " element " + std::to_string(i));
        }
      }
      inputs[n][i] = x0;
      const double numeric = (8.0 * (f[1] - f[2]) - (f[0] - f[3])) / (12.0 * eps);
      const double a = analytic[n][i];
      if (!std::isfinite(a)) {
        throw NumericError("grad_check: non-finite analytic gradient at input " +
                           std::to_string(n) + " element " + std::to_string(i));
      }
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double rel = std::abs(a - numeric) / denom;
      if (rel > result.max_rel_error) {
        result = {rel, n, i, a, numeric};
      }
    }
  }
  return result;
}

}  // namespace ridgematch
