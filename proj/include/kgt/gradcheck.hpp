#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "kgt/autograd.hpp"

namespace kgt {

/// Max over coordinates of |analytic − central difference| / max(1, |analytic|)
/// for a scalar function of x. h must lie in [1e-7, 1e-4].
double grad_check(const std::function<Var<double>(const Var<double>&)>& f, const Tensor<double>& x,
                  double h = 1e-5);

/// Same measure for an existing leaf that `f` closes over; the leaf value is
/// perturbed in place and restored.
double grad_check_leaf(const std::function<Var<double>()>& f, Var<double> leaf, double h = 1e-5);

struct GradCheckResult {
  std::string name;
  double error = 0;
  double tolerance = 0;
  bool passed = false;
};

/// Every differentiable operator plus the end-to-end layer and stage, in
/// 64-bit mode with h = 1e-5.
std::vector<GradCheckResult> run_gradcheck_suite(std::uint64_t seed = 0);

}  // namespace kgt
