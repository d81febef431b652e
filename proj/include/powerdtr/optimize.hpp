#pragma once

// Small unconstrained minimizers for smooth losses of a few parameters.
// Non-finite objective values are treated as infeasible trial points, so a
// line search simply backs off from overflow regions.

#include <functional>
#include <string>

#include "powerdtr/qcore.hpp"

namespace powerdtr {

/// Returns f(x); writes the gradient into `grad` when it is non-null.
using Objective = std::function<double(const Vector& x, Vector* grad)>;

enum class OptimizerKind { quasi_newton, nelder_mead };

struct OptimizeOptions {
  int max_iters = 500;
  /// Stop when max|grad| <= gradient_tol * max(1, |f(x0)|).
  double gradient_tol = 1e-8;
  /// Parameters beyond this magnitude count as divergence.
  double max_abs_parameter = 1e8;
  /// f below -unbounded_ratio * max(1, |f(x0)|) is reported as unbounded below.
  double unbounded_ratio = 1e10;
  /// Largest quasi-Newton step, in max-norm.
  double max_step = 1.0;
};

struct OptimizeResult {
  Vector x;
  double f = 0.0;
  double gradient_norm = 0.0;  // max-norm
  int iterations = 0;
  bool converged = false;
  bool unbounded = false;
  std::string message;
};

OptimizeResult bfgs(const Objective& objective, const Vector& x0, const OptimizeOptions& options = {});

/// Derivative-free simplex search; `converged` means the simplex collapsed
/// in both f and x before the iteration budget ran out.
OptimizeResult nelder_mead(const Objective& objective, const Vector& x0, const OptimizeOptions& options = {});

/// BFGS, falling back to Nelder-Mead and a BFGS polish when BFGS fails.
OptimizeResult minimize(const Objective& objective, const Vector& x0, const OptimizeOptions& options = {},
                        OptimizerKind kind = OptimizerKind::quasi_newton);

}  // namespace powerdtr
