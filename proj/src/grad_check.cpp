#include "mtl/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace mtl {

namespace {

double evaluate(const TapedLoss& loss, const Params& params) {
  Tape<double> tape;
  const auto vars = bind(tape, params);
  return loss(tape, vars).value().item();
}

}  // namespace

std::pair<double, GradMap> value_and_grad(const TapedLoss& loss, const Params& params) {
  Tape<double> tape;
  const auto vars = bind(tape, params);
  const Var<double> root = loss(tape, vars);
  const double value = root.value().item();
  return {value, backward(tape, root, vars)};
}

GradCheckReport grad_check_report(const TapedLoss& loss, const Params& params, double eps) {
  if (!(eps > 0.0)) throw ContractError("grad_check: eps must be positive");
  const GradMap analytic = value_and_grad(loss, params).second;
  GradCheckReport report;
  Params probe = params;
  for (std::size_t e = 0; e < probe.size(); ++e) {
    TensorD& t = probe.tensor(e);
    for (Index i = 0; i < t.size(); ++i) {
      const double saved = t[i];
      t[i] = saved + eps;
      const double up = evaluate(loss, probe);
      t[i] = saved - eps;
      const double down = evaluate(loss, probe);
      t[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic.tensor(e)[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), kGradCheckFloor});
      const double err = std::abs(a - numeric) / denom;
      if (err > report.max_rel_error || report.worst_index < 0) {
        if (err >= report.max_rel_error) {
          report.max_rel_error = err;
          report.worst_entry = probe.entry(e).first;
          report.worst_index = i;
          report.analytic = a;
          report.numeric = numeric;
        }
      }
    }
  }
  return report;
}

}  // namespace mtl
