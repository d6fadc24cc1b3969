#pragma once

#include <functional>
#include <vector>

#include "esam3/numerics/tape.hpp"

namespace esam3::num {

struct GradCheckResult {
  double max_error = 0.0;  // max |analytic - central| / max(1, |central|)
  std::size_t worst_index = 0;
  bool ok = false;         // max_error <= tol
};

using ScalarFn = std::function<Var(Tape&, Var)>;

/// Compares reverse-mode gradients of f at x against central differences.
GradCheckResult grad_check(const ScalarFn& f, const Tensor& x, double eps, double tol);

/// Parameter-space variant for whole training graphs. `build` must register
/// each tensor in `params` through Tape::param. Checks `coords_per_tensor`
/// seeded coordinates of every tensor (all of them when it is 0).
GradCheckResult grad_check_params(const std::function<Var(Tape&)>& build, const std::vector<Tensor*>& params,
                                  double eps, double tol, std::size_t coords_per_tensor, std::uint64_t seed);

}  // namespace esam3::num
