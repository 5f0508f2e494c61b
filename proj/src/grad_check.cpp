#include "xnet/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace xnet {

GradCheckResult grad_check(const std::function<Var<double>()>& f, std::vector<Var<double>> params, double step,
                           double floor) {
  for (auto& p : params) p.zero_grad();
  const Var<double> base = f();
  base.backward();
  // Central differences carry ~ulp(f)/step of rounding noise, so the floor scales with |f|.
  const double floor_eff = floor * std::max(1.0, std::abs(base.value().item()));
  std::vector<Tensor<double>> analytic;
  analytic.reserve(params.size());
  for (auto& p : params) analytic.push_back(p.grad());

  GradCheckResult result;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto values = params[k].mutable_value().data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + step;
      const double up = f().value().item();
      values[i] = saved - step;
      const double down = f().value().item();
      values[i] = saved;

      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic[k][i];
      const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor_eff});
      ++result.checked;
      if (result.checked == 1 || err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst_param = "param" + std::to_string(k);
        result.worst_index = i;
        result.analytic = a;
        result.numeric = numeric;
      }
    }
  }
  for (auto& p : params) p.zero_grad();
  return result;
}

}  // namespace xnet
