#include <algorithm>
#include <cmath>
#include <limits>
#include <functional>
#include <memory>
#include <random>
#include <sstream>

#include "design.hpp"
#include "powerdtr/estimators.hpp"

namespace powerdtr {

Matrix FitResult::psi_covariance() const {
  const Index p = psi_hat.size();
  if (covariance.rows() < p) return {};
  return covariance.bottomRightCorner(p, p);
}

namespace {

inline constexpr double kConditionLimit = 1e8;
inline constexpr double kResidualTolerance = 1e-6;
inline constexpr double kFlatTolerance = 1e-6;

struct Problem {
  Index dim = 0;
  Index alpha_dim = 0;
  Objective objective;
  std::function<Matrix(const Vector&)> scores;  // n x dim, rows are E_i
  std::function<bool(const Vector&, std::string*)> accept;  // extra convergence check
  std::vector<Vector> extra_starts;
};

Matrix mean_score_jacobian(const Problem& prob, const Vector& theta) {
  Matrix J(prob.dim, prob.dim);
  for (Index j = 0; j < prob.dim; ++j) {
    const double h = 1e-5 * std::max(1.0, std::abs(theta[j]));
    Vector up = theta, down = theta;
    up[j] += h;
    down[j] -= h;
    J.col(j) = (prob.scores(up).colwise().mean() - prob.scores(down).colwise().mean()).transpose() / (2.0 * h);
  }
  return J;
}

void attach_sandwich(const Problem& prob, const Vector& theta, FitResult& r) {
  const Matrix S = prob.scores(theta);
  const auto n = static_cast<double>(S.rows());
  const Matrix I = S.transpose() * S / n;
  const Matrix J = mean_score_jacobian(prob, theta);
  Eigen::JacobiSVD<Matrix> svd(J);
  const Vector sv = svd.singularValues();
  const double cond = sv[sv.size() - 1] > 0.0 ? sv[0] / sv[sv.size() - 1] : std::numeric_limits<double>::infinity();
  if (!std::isfinite(cond) || cond > kConditionLimit) {
    std::ostringstream msg;
    msg << "estimating-function Jacobian is near-singular (condition number " << cond
        << "); the loss is flat along some parameter direction";
    r.diagnostics.push_back(msg.str());
    r.converged = false;
    r.covariance = Matrix::Constant(prob.dim, prob.dim, std::numeric_limits<double>::quiet_NaN());
    return;
  }
  const Matrix Jinv = J.inverse();
  Matrix cov = Jinv * I * Jinv.transpose() / n;
  r.covariance = 0.5 * (cov + cov.transpose());
}

double min_singular_value(const Matrix& J, double* cond) {
  Eigen::JacobiSVD<Matrix> svd(J);
  const Vector sv = svd.singularValues();
  const double lo = sv[sv.size() - 1];
  *cond = lo > 0.0 ? sv[0] / lo : std::numeric_limits<double>::infinity();
  return lo;
}

// Rejects optima on flat regions where the estimating function vanishes identically.
bool identified(const Problem& prob, const Vector& theta, double scale, std::string* why) {
  double cond = 0.0;
  const double lo = min_singular_value(mean_score_jacobian(prob, theta), &cond);
  if (std::isfinite(cond) && cond <= kConditionLimit && lo > kFlatTolerance * scale) return true;
  std::ostringstream msg;
  msg << "optimum lies on a flat region (smallest Jacobian singular value " << lo << ", condition number " << cond
      << ")";
  *why = msg.str();
  return false;
}

FitResult run_fit(const Problem& prob, const FitConfig& config, Method method, const detail::Design& design) {
  OptimizeOptions opts;
  opts.max_iters = config.max_iters;
  opts.gradient_tol = config.gradient_tol;

  std::vector<Vector> starts{Vector::Zero(prob.dim)};
  std::mt19937_64 rng(config.seed);
  std::uniform_real_distribution<double> unif(-3.0, 3.0);
  for (int r = 0; r < config.restarts; ++r) {
    Vector s(prob.dim);
    for (Index j = 0; j < prob.dim; ++j) s[j] = unif(rng);
    starts.push_back(s);
  }
  starts.insert(starts.end(), prob.extra_starts.begin(), prob.extra_starts.end());
  const double scale = std::max(1.0, std::abs(prob.objective(starts.front(), nullptr)));

  struct Candidate {
    OptimizeResult opt;
    bool ok;
    std::string why;
  };
  std::vector<Candidate> candidates;
  int total_iters = 0;
  bool unbounded = false;
  for (const auto& x0 : starts) {
    OptimizeResult o = minimize(prob.objective, x0, opts, config.optimizer);
    total_iters += o.iterations;
    if (o.unbounded) unbounded = true;
    if (!std::isfinite(o.f) || !o.x.allFinite()) continue;
    bool ok = o.converged && !o.unbounded;
    std::string why = o.message;
    candidates.push_back({std::move(o), ok, std::move(why)});
  }
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const Candidate& l, const Candidate& r) { return l.opt.f < r.opt.f; });

  FitResult best;
  best.method = method;
  best.index = config.index;
  best.iterations = total_iters;
  const Candidate* chosen = nullptr;
  std::string last_failure = candidates.empty() ? "every start produced non-finite values" : candidates.front().why;
  for (auto& c : candidates) {
    if (!c.ok) continue;
    if (prob.accept && !prob.accept(c.opt.x, &c.why)) {
      c.ok = false;
      last_failure = c.why;
      continue;
    }
    if (!identified(prob, c.opt.x, scale, &c.why)) {
      c.ok = false;
      last_failure = c.why;
      continue;
    }
    chosen = &c;
    break;
  }
  if (!chosen && !candidates.empty()) chosen = &candidates.front();
  if (chosen) {
    best.converged = chosen->ok;
    best.loss = chosen->opt.f;
    best.gradient_norm = chosen->opt.gradient_norm;
    best.alpha_hat = chosen->opt.x.head(prob.alpha_dim);
    best.psi_hat = chosen->opt.x.tail(prob.dim - prob.alpha_dim);
  } else {
    best.psi_hat = Vector::Constant(prob.dim - prob.alpha_dim, std::numeric_limits<double>::quiet_NaN());
    best.alpha_hat = Vector::Constant(prob.alpha_dim, std::numeric_limits<double>::quiet_NaN());
    best.loss = std::numeric_limits<double>::quiet_NaN();
    best.gradient_norm = std::numeric_limits<double>::quiet_NaN();
  }
  if (unbounded && best.converged)
    best.diagnostics.push_back("loss is unbounded below on this sample; reporting the best finite local minimum");
  else if (unbounded)
    best.diagnostics.push_back("loss is unbounded below on this sample and no start reached a finite local minimum");
  else if (!best.converged)
    best.diagnostics.push_back("no start converged: " + last_failure);
  if (design.heavy_weights > 0) {
    best.diagnostics.push_back(std::to_string(design.heavy_weights) +
                               " record(s) have Y / p above 1e12; check outcome scale and propensities");
  }
  if (config.compute_covariance && best.converged) {
    Vector theta(prob.dim);
    theta << best.alpha_hat, best.psi_hat;
    attach_sandwich(prob, theta, best);
  }
  return best;
}

using SumFn = std::function<double(const detail::Design&, const Vector&, Vector*)>;

void set_sum_problem(Problem& prob, std::shared_ptr<const detail::Design> design, SumFn sum, bool with_alpha) {
  prob.objective = [design, sum, with_alpha](const Vector& th, Vector* grad) {
    const auto n = static_cast<double>(design->n);
    if (!grad) return sum(*design, th, nullptr) / n;
    Vector coef;
    const double f = sum(*design, th, &coef) / n;
    *grad = detail::coef_gradient(*design, coef, with_alpha) / n;
    return f;
  };
  prob.scores = [design, sum, with_alpha](const Vector& th) {
    Vector coef;
    sum(*design, th, &coef);
    return detail::coef_scores(*design, coef, with_alpha);
  };
}

}  // namespace

FitResult fit_gamma_mde(const std::vector<StageRecord>& records, const PolicyComponent& pc, const FitConfig& config) {
  const double gamma = config.index;
  if (gamma == 0.0) throw SingularIndexError("gamma = 0 is singular for the gamma-power loss");
  if (!std::isfinite(gamma)) throw SingularIndexError("gamma must be finite");
  const auto design = std::make_shared<const detail::Design>(detail::build_design(records, pc));
  Problem prob;
  prob.dim = design->p;

  if (gamma == -1.0) {
    // Root of the unweighted estimating equation via min 0.5 |mean E|^2.
    auto mean_score = [design](const Vector& psi) {
      Vector coef;
      detail::gamma_unweighted_coef(*design, psi, coef);
      return Vector(-detail::coef_gradient(*design, coef, false) / static_cast<double>(design->n));
    };
    prob.objective = [design, mean_score](const Vector& psi, Vector* grad) {
      const Vector e = mean_score(psi);
      if (grad) *grad = detail::gamma_unweighted_jacobian(*design, psi).transpose() * e;
      return 0.5 * e.squaredNorm();
    };
    prob.scores = [design](const Vector& psi) {
      Vector coef;
      detail::gamma_unweighted_coef(*design, psi, coef);
      return detail::coef_scores(*design, coef, false);
    };
    const Objective gm = [design](const Vector& psi, Vector* grad) {
      const auto n = static_cast<double>(design->n);
      if (!grad) return detail::gamma_gm_sum(*design, psi, nullptr) / n;
      Vector coef;
      const double f = detail::gamma_gm_sum(*design, psi, &coef) / n;
      *grad = detail::coef_gradient(*design, coef, false) / n;
      return f;
    };
    OptimizeOptions gm_opts;
    gm_opts.max_iters = config.max_iters;
    gm_opts.gradient_tol = config.gradient_tol;
    const OptimizeResult warm = minimize(gm, Vector::Zero(prob.dim), gm_opts, config.optimizer);
    if (warm.x.allFinite()) prob.extra_starts.push_back(warm.x);
    prob.accept = [mean_score](const Vector& psi, std::string* why) {
      const double r = mean_score(psi).cwiseAbs().maxCoeff();
      if (r <= kResidualTolerance) return true;
      std::ostringstream msg;
      msg << "estimating equation residual " << r << " exceeds " << kResidualTolerance;
      *why = msg.str();
      return false;
    };
  } else {
    set_sum_problem(prob, design,
                    [gamma](const detail::Design& d, const Vector& psi, Vector* c) {
                      return detail::gamma_sum(d, psi, gamma, c);
                    },
                    false);
  }
  FitResult r = run_fit(prob, config, Method::gamma_mde, *design);
  if (gamma == -1.0) r.note = "gamma = -1 solved through the unweighted estimating equation";
  return r;
}

FitResult fit_beta_mde(const std::vector<StageRecord>& records, const ModelQFunction& model, const FitConfig& config) {
  const double beta = config.index;
  if (beta == -1.0) throw SingularIndexError("beta = -1 is singular for the beta-power loss");
  if (!std::isfinite(beta)) throw SingularIndexError("beta must be finite");
  const auto design =
      std::make_shared<const detail::Design>(detail::build_design(records, model.policy_part(), &model.nuisance()));
  Problem prob;
  prob.dim = design->dim();
  prob.alpha_dim = design->k;
  set_sum_problem(prob, design,
                  [beta](const detail::Design& d, const Vector& th, Vector* c) { return detail::beta_sum(d, th, beta, c); },
                  true);
  FitResult r = run_fit(prob, config, Method::beta_mde, *design);
  if (beta == 0.0) r.note = "beta = 0 dispatched to the extended KL loss";
  return r;
}

FitResult fit_ml(const std::vector<StageRecord>& records, const ModelQFunction& model, const FitConfig& config) {
  const auto design =
      std::make_shared<const detail::Design>(detail::build_design(records, model.policy_part(), &model.nuisance()));
  Problem prob;
  prob.dim = design->dim();
  prob.alpha_dim = design->k;
  const OutcomeFamily family = config.family;
  set_sum_problem(prob, design,
                  [family](const detail::Design& d, const Vector& th, Vector* c) { return detail::ml_sum(d, th, family, c); },
                  true);
  FitResult r = run_fit(prob, config, Method::ml, *design);
  r.index = 0.0;
  return r;
}

FitResult fit(const std::vector<StageRecord>& records, const ModelQFunction& model, const FitConfig& config) {
  switch (config.method) {
    case Method::gamma_mde: return fit_gamma_mde(records, model.policy_part(), config);
    case Method::beta_mde: return fit_beta_mde(records, model, config);
    case Method::ml: return fit_ml(records, model, config);
  }
  throw StructuralError("unknown fit method");
}

}  // namespace powerdtr
