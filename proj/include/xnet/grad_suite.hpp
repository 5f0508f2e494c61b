#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "xnet/grad_check.hpp"

namespace xnet {

struct OpGradReport {
  std::string op;
  int instances = 0;
  double max_rel_error = 0.0;
  GradCheckResult worst;
};

// Finite-difference checks (float64) of every differentiable op and both
// losses over `instances` random shapes/values each. Inputs are drawn away
// from kinks (relu at 0, max-pool ties, smooth-L1 at |d| = 1, focal clamp).
std::vector<OpGradReport> run_grad_suite(int instances, std::uint64_t seed);

}  // namespace xnet
