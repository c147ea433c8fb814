#pragma once

#include <functional>
#include <string>

#include "mtl/params.hpp"

namespace mtl {

using TapedLoss = std::function<Var<double>(Tape<double>&, const ParamVars<double>&)>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_entry;
  Index worst_index = -1;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Magnitudes below this are compared absolutely rather than relatively.
inline constexpr double kGradCheckFloor = 1e-4;

/// Compares backward() against central differences
/// (f(θ+ε·e_i) − f(θ−ε·e_i)) / 2ε for every parameter element.
/// Error per element is |a − n| / max(|a|, |n|, kGradCheckFloor).
GradCheckReport grad_check_report(const TapedLoss& loss, const Params& params, double eps);

inline double grad_check(const TapedLoss& loss, const Params& params, double eps) {
  return grad_check_report(loss, params, eps).max_rel_error;
}

/// Loss value and analytic gradient of a taped loss at `params`.
std::pair<double, GradMap> value_and_grad(const TapedLoss& loss, const Params& params);

}  // namespace mtl
