#pragma once

// Precomputed feature matrices shared by the loss and fitting code.
//
// Losses are returned as sums over records together with a coefficient
// vector c (one entry per record-action pair) such that the gradient of the
// sum with respect to theta = (alpha, psi) is [B' rowsum(c); G' c] and the
// per-record estimating function is its negated record slice.

#include <vector>

#include "powerdtr/estimators.hpp"

namespace powerdtr::detail {

struct Design {
  Index n = 0;  // records
  Index m = 0;  // actions
  Index p = 0;  // policy parameters
  Index k = 0;  // nuisance parameters
  Matrix G;     // (n m) x p, row i m + a is dg/dpsi at (x_i, a)
  Matrix B;     // n x k nuisance basis
  Vector offset;           // fixed nuisance f(x_i)
  std::vector<Index> obs;  // position of the observed action
  Vector w;                // Y / p
  Vector y;
  std::size_t heavy_weights = 0;  // records with Y / p > 1e12

  std::size_t size() const { return static_cast<std::size_t>(n); }
  Index dim() const { return k + p; }
};

inline constexpr double kHeavyWeight = 1e12;

Design build_design(const std::vector<StageRecord>& records, const PolicyComponent& pc,
                    const NuisanceComponent* nuisance = nullptr);

/// Sum over records of the gamma-power loss terms at psi.
double gamma_sum(const Design& d, const Vector& psi, double gamma, Vector* coef);

/// Coefficients of the unweighted (gamma = -1) estimating function at psi.
void gamma_unweighted_coef(const Design& d, const Vector& psi, Vector& coef);

/// Sum of Y / p * exp(mean_a g - g(A)), a convex loss used to start the gamma = -1 root search.
double gamma_gm_sum(const Design& d, const Vector& psi, Vector* coef);

/// psi-Jacobian of the mean unweighted estimating function.
Matrix gamma_unweighted_jacobian(const Design& d, const Vector& psi);

/// Sum of beta-power loss terms at theta = (alpha, psi); beta = 0 is the extended KL loss.
double beta_sum(const Design& d, const Vector& theta, double beta, Vector* coef);

/// Sum of negative log-likelihood terms at theta = (alpha, psi).
double ml_sum(const Design& d, const Vector& theta, OutcomeFamily family, Vector* coef);

/// [B' rowsum(c); G' c] restricted to the parameters present (psi only when k = 0 and alpha is unused).
Vector coef_gradient(const Design& d, const Vector& coef, bool with_alpha);

/// n x dim matrix whose row i is minus the record-i slice of the gradient.
Matrix coef_scores(const Design& d, const Vector& coef, bool with_alpha);

}  // namespace powerdtr::detail
