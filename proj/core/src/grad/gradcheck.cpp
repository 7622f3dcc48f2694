#include "rarecp/grad/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace rarecp::grad {

namespace {

double evaluate(const ScalarFn& f, const std::vector<Tensor>& params) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (const Tensor& p : params) vars.push_back(tape.constant(p));
  return f(tape, vars).item();
}

}  // namespace

GradCheckResult finite_diff_check(const ScalarFn& f, const std::vector<Tensor>& params, double h) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (const Tensor& p : params) vars.push_back(tape.parameter(p));
  Var loss = f(tape, vars);
  tape.backward(loss);

  GradCheckResult result;
  std::vector<Tensor> work = params;
  for (std::size_t k = 0; k < params.size(); ++k) {
    const Tensor& analytic = vars[k].grad();
    for (std::size_t i = 0; i < params[k].size(); ++i) {
      const double orig = params[k][i];
      work[k][i] = orig + h;
      const double up = evaluate(f, work);
      work[k][i] = orig - h;
      const double down = evaluate(f, work);
      work[k][i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[i];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
      ++result.checked;
      if (rel > result.max_rel_error || !std::isfinite(rel)) {
        result.max_rel_error = std::isfinite(rel) ? rel : INFINITY;
        result.worst_param = k;
        result.worst_index = i;
        result.analytic = a;
        result.numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace rarecp::grad
