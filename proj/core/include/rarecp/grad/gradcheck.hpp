#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "rarecp/grad/tape.hpp"

namespace rarecp::grad {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
};

// Builds a scalar on the given tape from one Var per parameter tensor.
using ScalarFn = std::function<Var(Tape&, std::span<const Var>)>;

// Compares tape gradients against central differences
// (f(x + h e_i) - f(x - h e_i)) / 2h for every parameter component. Relative
// error uses max(|a|, |b|, 1e-8) as the denominator.
GradCheckResult finite_diff_check(const ScalarFn& f, const std::vector<Tensor>& params, double h = 1e-5);

}  // namespace rarecp::grad
