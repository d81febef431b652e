#pragma once

// Divergences on the space of positive Q-functions.
//
// The gamma-power divergence vanishes exactly on policy-equivalence classes
// (Q1 = eta(x) Q0), so minimizing it targets the greedy policy and ignores the
// covariate-only scale of the Q-function. The beta-power (U-divergence) family
// and the extended KL divergence distinguish every pair of Q-functions.
//
// Expectations over X are weighted grid sums; a dataset-backed instance is a
// grid with weights 1/n on the observed covariates.

#include <functional>
#include <string>
#include <vector>

#include "powerdtr/qcore.hpp"

namespace powerdtr {

enum class Family { gamma_power, beta_power, ekl, nkl };

std::string to_string(Family f);
Family family_from_string(const std::string& name);

struct DivergenceSpec {
  Family family = Family::gamma_power;
  double index = 1.0;  // gamma or beta; ignored for ekl and nkl
};

/// value = lhs_entropy - diag_entropy, except that `value` is computed by a
/// cancellation-free route and clamped at zero within kClampTolerance.
struct DivergenceResult {
  Family family = Family::gamma_power;
  double index = 0.0;
  double value = 0.0;
  double lhs_entropy = 0.0;
  double diag_entropy = 0.0;
  std::string note;  // set when a singular index was dispatched to a limit form
};

/// Rounding-level negative divergences within this bound are reported as 0;
/// anything more negative raises ConsistencyError.
inline constexpr double kClampTolerance = 1e-12;

/// gamma-power cross entropy H_gamma(q0, q1). Throws SingularIndexError at 0 and -1.
double gamma_cross_entropy(const TabularQFunction& q0, const TabularQFunction& q1, double gamma);

/// D_gamma(q0, q1) = H_gamma(q0, q1) - H_gamma(q0, q0) >= 0.
double gamma_divergence(const TabularQFunction& q0, const TabularQFunction& q1, double gamma);

/// exp(log_scale) * D_gamma(q0, q1), evaluated without forming the unscaled
/// entropies. Needed near gamma = -1 where the entropies over/underflow.
double gamma_divergence_scaled(const TabularQFunction& q0, const TabularQFunction& q1, double gamma,
                               double log_scale);

/// Normalized KL divergence, the gamma -> 0 limit of D_gamma.
double nkl_divergence(const TabularQFunction& q0, const TabularQFunction& q1);

/// E[(1/m) sum_a (q0/q1) GM_q1(X) - GM_q0(X)], the gamma -> -1 limit of
/// m^{-1/(1+gamma)} D_gamma, with GM the geometric mean over actions.
double gm_limit_divergence(const TabularQFunction& q0, const TabularQFunction& q1);

struct ValueGapPoint {
  double gamma = 0.0;
  double scaled_divergence = 0.0;  // gamma * D_gamma(q0, q1)
  double value_gap = 0.0;          // V0(D0) - V0(D1)
};

/// Evaluates gamma * D_gamma against the value gap of the two greedy policies
/// under q0. Requires strict argmaxes (DegenerateError on ties).
std::vector<ValueGapPoint> value_gap_limit(const TabularQFunction& q0, const TabularQFunction& q1,
                                           const std::vector<double>& gammas);

/// H_beta(q0, q1) = E sum_a [q1^{b+1}/(b+1) - q0 q1^b / b].
double beta_cross_entropy(const TabularQFunction& q0, const TabularQFunction& q1, double beta);

/// D_beta(q0, q1); beta = 0 dispatches to ekl_divergence, beta = -1 throws.
double beta_divergence(const TabularQFunction& q0, const TabularQFunction& q1, double beta);

/// E sum_a [q0 log(q0/q1) - q0 + q1].
double ekl_divergence(const TabularQFunction& q0, const TabularQFunction& q1);

/// Generator of a U-divergence: U convex increasing, u = U', and u^{-1}.
struct UGenerator {
  std::function<double(double)> U;
  std::function<double(double)> u_inverse;
};

UGenerator beta_power_generator(double beta);

/// H_U(q0, q1) = E sum_a [U(u^{-1}(q1)) - q0 u^{-1}(q1)].
double u_cross_entropy(const TabularQFunction& q0, const TabularQFunction& q1, const UGenerator& gen);
double u_divergence(const TabularQFunction& q0, const TabularQFunction& q1, const UGenerator& gen);

struct HarmonicCheck {
  double lhs = 0.0;  // H_{-2}(q, q)
  double rhs = 0.0;  // (m/2) E[HM_q(X)]
};

/// Both sides of the harmonic-mean identity for the diagonal entropy at gamma = -2.
HarmonicCheck harmonic_identity_check(const TabularQFunction& q);

/// Dispatching front end used by the CLI.
DivergenceResult evaluate_divergence(const DivergenceSpec& spec, const TabularQFunction& q0,
                                     const TabularQFunction& q1);

}  // namespace powerdtr
