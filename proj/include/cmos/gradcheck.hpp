#pragma once

#include <functional>

#include "cmos/graph.hpp"

namespace cmos {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;  // flat coordinate with the largest error
  double analytic = 0.0;        // values at worst_index
  double numeric = 0.0;
  std::size_t kinks = 0;        // coordinates skipped as non-differentiable within eps
};

/// Scalar function of one tensor, evaluated on a fresh 64-bit graph.
using ScalarFn = std::function<Var<double>(Graph<double>&, Var<double>)>;

/// Compares reverse-mode gradients with central differences
/// (f(x+eps) - f(x-eps)) / (2 eps) at every coordinate of `point`. The error at a
/// coordinate is |a - n| / max(1e-8, |a| + |n|); the maximum is returned.
///
/// A coordinate above `tolerance` is probed again at eps/2 and passes if that estimate
/// agrees. Otherwise, when the two central differences disagree by far more than
/// roundoff, a ReLU or max-pool kink lies within eps/2 and the difference quotient is no
/// oracle there: the coordinate counts as a kink and is left out of the maximum. More than max(1, n/100) kinks fail the check with
/// the worst skipped error reported.
GradCheckResult grad_check(const ScalarFn& fn, const Tensor<double>& point, double eps = 1e-4,
                           double tolerance = 1e-4);

}  // namespace cmos
