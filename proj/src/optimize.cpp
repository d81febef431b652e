#include "powerdtr/optimize.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

namespace powerdtr {

namespace {

double max_norm(const Vector& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

bool usable(double f, const Vector& g) { return std::isfinite(f) && g.allFinite(); }

// A stalled line search counts as convergence when the gradient is this close to the tolerance.
constexpr double kStallFactor = 1e3;

}  // namespace

OptimizeResult bfgs(const Objective& objective, const Vector& x0, const OptimizeOptions& options) {
  OptimizeResult r;
  const Index n = x0.size();
  Vector x = x0;
  Vector g(n);
  double f = objective(x, &g);
  if (!usable(f, g)) {
    r.x = x;
    r.f = f;
    r.message = "objective is not finite at the starting point";
    return r;
  }
  const double tol = options.gradient_tol * std::max(1.0, std::abs(f));
  const double floor = -options.unbounded_ratio * std::max(1.0, std::abs(f));
  Matrix H = Matrix::Identity(n, n);
  bool fresh = true;
  int it = 0;
  for (; it < options.max_iters; ++it) {
    if (max_norm(g) <= tol) {
      r.converged = true;
      r.message = "gradient tolerance reached";
      break;
    }
    Vector d = -H * g;
    double slope = g.dot(d);
    if (!(slope < 0.0)) {
      H.setIdentity();
      fresh = true;
      d = -g;
      slope = -g.squaredNorm();
    }
    const double longest = max_norm(d);
    double step = longest > options.max_step ? options.max_step / longest : 1.0;
    Vector x_new(n), g_new(n);
    double f_new = 0.0;
    bool accepted = false;
    for (int k = 0; k < 80; ++k) {
      x_new = x + step * d;
      f_new = objective(x_new, &g_new);
      if (usable(f_new, g_new) && f_new <= f + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      if (!fresh) {
        H.setIdentity();
        fresh = true;
        continue;
      }
      if (max_norm(g) <= kStallFactor * tol) {
        r.converged = true;
        r.message = "no further decrease possible at working precision";
      } else {
        r.message = "line search failed to decrease the objective";
      }
      break;
    }
    const Vector s = x_new - x;
    const Vector y = g_new - g;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      if (fresh) H *= sy / y.squaredNorm();
      const double rho = 1.0 / sy;
      const Matrix I = Matrix::Identity(n, n);
      H = (I - rho * s * y.transpose()) * H * (I - rho * y * s.transpose()) + rho * s * s.transpose();
      fresh = false;
    }
    const bool negligible = f - f_new <= 1e-14 * std::max(1.0, std::abs(f));
    x = x_new;
    f = f_new;
    g = g_new;
    if (negligible && max_norm(g) <= kStallFactor * tol) {
      r.converged = true;
      r.message = "no further decrease possible at working precision";
      ++it;
      break;
    }
    if (f < floor) {
      r.unbounded = true;
      r.message = "objective appears unbounded below";
      ++it;
      break;
    }
    if (max_norm(x) > options.max_abs_parameter) {
      r.message = "parameters diverged";
      ++it;
      break;
    }
  }
  if (!r.converged && r.message.empty()) {
    if (max_norm(g) <= tol) {
      r.converged = true;
      r.message = "gradient tolerance reached";
    } else {
      r.message = "iteration limit reached";
    }
  }
  r.x = x;
  r.f = f;
  r.gradient_norm = max_norm(g);
  r.iterations = it;
  return r;
}

OptimizeResult nelder_mead(const Objective& objective, const Vector& x0, const OptimizeOptions& options) {
  const Index n = x0.size();
  auto eval = [&](const Vector& x) {
    const double v = objective(x, nullptr);
    return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
  };
  std::vector<Vector> pts(static_cast<std::size_t>(n + 1), x0);
  std::vector<double> fv(static_cast<std::size_t>(n + 1));
  for (Index i = 0; i < n; ++i) pts[static_cast<std::size_t>(i + 1)][i] += x0[i] != 0.0 ? 0.25 * std::abs(x0[i]) : 0.25;
  for (std::size_t i = 0; i < pts.size(); ++i) fv[i] = eval(pts[i]);
  const double scale = std::max(1.0, std::isfinite(fv[0]) ? std::abs(fv[0]) : 1.0);
  const double floor = -options.unbounded_ratio * scale;
  const int budget = options.max_iters * static_cast<int>(std::max<Index>(n, 1)) * 4;

  OptimizeResult r;
  std::vector<std::size_t> order(pts.size());
  int it = 0;
  for (; it < budget; ++it) {
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return fv[a] < fv[b]; });
    const std::size_t best = order.front(), worst = order.back(), second = order[order.size() - 2];
    double xspread = 0.0;
    for (const auto& p : pts) xspread = std::max(xspread, max_norm(p - pts[best]));
    if (std::isfinite(fv[worst]) && fv[worst] - fv[best] <= 1e-14 * scale && xspread <= 1e-10 * (1.0 + max_norm(pts[best]))) {
      r.converged = true;
      break;
    }
    Vector centroid = Vector::Zero(n);
    for (std::size_t i = 0; i < pts.size(); ++i)
      if (i != worst) centroid += pts[i];
    centroid /= static_cast<double>(n);
    const Vector xr = centroid + (centroid - pts[worst]);
    const double fr = eval(xr);
    if (fr < fv[best]) {
      const Vector xe = centroid + 2.0 * (centroid - pts[worst]);
      const double fe = eval(xe);
      if (fe < fr) {
        pts[worst] = xe;
        fv[worst] = fe;
      } else {
        pts[worst] = xr;
        fv[worst] = fr;
      }
    } else if (fr < fv[second]) {
      pts[worst] = xr;
      fv[worst] = fr;
    } else {
      const bool outside = fr < fv[worst];
      const Vector xc = outside ? Vector(centroid + 0.5 * (xr - centroid)) : Vector(centroid + 0.5 * (pts[worst] - centroid));
      const double fc = eval(xc);
      if (fc < (outside ? fr : fv[worst])) {
        pts[worst] = xc;
        fv[worst] = fc;
      } else {
        for (std::size_t i = 0; i < pts.size(); ++i) {
          if (i == best) continue;
          pts[i] = pts[best] + 0.5 * (pts[i] - pts[best]);
          fv[i] = eval(pts[i]);
        }
      }
    }
    if (max_norm(pts[best]) > options.max_abs_parameter) break;
    if (*std::min_element(fv.begin(), fv.end()) < floor) {
      r.unbounded = true;
      break;
    }
  }
  const auto best = static_cast<std::size_t>(std::min_element(fv.begin(), fv.end()) - fv.begin());
  r.x = pts[best];
  Vector g(n);
  r.f = objective(r.x, &g);
  r.gradient_norm = g.allFinite() ? max_norm(g) : std::numeric_limits<double>::infinity();
  r.iterations = it;
  r.message = r.converged   ? "simplex collapsed"
              : r.unbounded ? "objective appears unbounded below"
                            : "simplex did not collapse within the iteration budget";
  return r;
}

OptimizeResult minimize(const Objective& objective, const Vector& x0, const OptimizeOptions& options,
                        OptimizerKind kind) {
  if (kind == OptimizerKind::nelder_mead) return nelder_mead(objective, x0, options);
  OptimizeResult first = bfgs(objective, x0, options);
  if (first.converged || first.unbounded) return first;
  const Vector start = first.x.allFinite() && std::isfinite(first.f) ? first.x : x0;
  OptimizeResult simplex = nelder_mead(objective, start, options);
  const Vector restart = std::isfinite(simplex.f) && (!std::isfinite(first.f) || simplex.f <= first.f) ? simplex.x : start;
  OptimizeResult polish = bfgs(objective, restart, options);
  polish.iterations += first.iterations + simplex.iterations;
  if (!polish.converged) {
    polish.message = "quasi-Newton and Nelder-Mead fallback both failed: " + first.message;
    if (std::isfinite(first.f) && first.f < polish.f) {
      first.iterations = polish.iterations;
      first.message = polish.message;
      return first;
    }
  } else {
    polish.message = "converged after Nelder-Mead fallback";
  }
  return polish;
}

}  // namespace powerdtr
