#pragma once

#include <functional>
#include <string>
#include <vector>

#include "xnet/autograd.hpp"

namespace xnet {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
};

// Compares reverse-mode gradients of the scalar `f` with central differences.
// `f` must rebuild its graph from the current parameter values on each call.
// Relative error is |a - n| / max(|a|, |n|, floor * max(1, |f|)).
GradCheckResult grad_check(const std::function<Var<double>()>& f, std::vector<Var<double>> params,
                           double step = 1e-5, double floor = 1e-6);

}  // namespace xnet
