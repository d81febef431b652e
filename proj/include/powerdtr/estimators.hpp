#pragma once

// Minimum-divergence estimators of the policy parameter psi.
//
// Records carry Y / p(A | X) as the importance weight W. Losses are sample
// means over records; estimating functions are the negated per-record loss
// gradients, so sum_i E_i = -grad(n * loss).

#include <cstdint>
#include <string>
#include <vector>

#include "powerdtr/models.hpp"
#include "powerdtr/optimize.hpp"

namespace powerdtr {

/// One observation (x, a, y, p) of a single stage; x is the stage history.
struct StageRecord {
  Covariate x;
  Action a = 0;
  double y = 0.0;
  double p = 1.0;
};

/// Records of stage t (0-based) with the flattened history as covariate.
/// Throws InvalidRecordError when a propensity is missing.
std::vector<StageRecord> stage_records(const TrajectoryDataset& data, std::size_t t = 0);

enum class Method { gamma_mde, beta_mde, ml };
enum class OutcomeFamily { exponential, poisson };

std::string to_string(Method m);
Method method_from_string(const std::string& name);

struct FitConfig {
  Method method = Method::gamma_mde;
  double index = -1.5;  // gamma or beta
  OptimizerKind optimizer = OptimizerKind::quasi_newton;
  int max_iters = 500;
  double gradient_tol = 1e-8;
  int restarts = 5;
  std::uint64_t seed = 0;
  OutcomeFamily family = OutcomeFamily::exponential;  // ml only
  bool compute_covariance = true;
};

struct FitResult {
  Method method = Method::gamma_mde;
  double index = 0.0;
  Vector psi_hat;
  Vector alpha_hat;  // empty for gamma_mde
  double loss = 0.0;
  double gradient_norm = 0.0;
  /// Sandwich covariance of (alpha_hat, psi_hat), in that order.
  Matrix covariance;
  bool converged = false;
  int iterations = 0;
  std::vector<std::string> diagnostics;
  std::string note;

  /// Trailing psi block of `covariance`.
  Matrix psi_covariance() const;
};

/// Mean gamma-power loss -(1/gamma) mean W e^{gamma g_A} / (sum_a e^{(gamma+1) g_a})^{gamma/(gamma+1)}.
double gamma_loss(const Vector& psi, const std::vector<StageRecord>& records, const PolicyComponent& pc,
                  double gamma);
double gamma_loss(const Vector& psi, const TrajectoryDataset& data, const PolicyComponent& pc, double gamma);

/// Per-record estimating function. For gamma != -1 it equals minus the psi
/// gradient of the record's loss term; gamma = -1 uses the unweighted form
/// W e^{-g_A} (G_A - mean_a G_a).
Vector gamma_estimating_function(const Vector& psi, const StageRecord& record, const PolicyComponent& pc,
                                 double gamma);

/// Mean beta-power loss mean[-W e^{beta eta_A} / beta + sum_a e^{(beta+1) eta_a} / (beta+1)]
/// with eta = f(x, alpha) + g(x, a, psi); beta = 0 gives the extended KL loss.
double beta_loss(const Vector& alpha, const Vector& psi, const std::vector<StageRecord>& records,
                 const ModelQFunction& model, double beta);

/// Negative mean log-likelihood of the Q-learning GLM with mean Q = exp{f + g}.
double ml_loss(const Vector& alpha, const Vector& psi, const std::vector<StageRecord>& records,
               const ModelQFunction& model, OutcomeFamily family = OutcomeFamily::exponential);

/// (Y - Q) d nu / d theta with theta = (alpha, psi) and nu the canonical parameter.
Vector ml_estimating_function(const Vector& alpha, const Vector& psi, const StageRecord& record,
                              const ModelQFunction& model, OutcomeFamily family = OutcomeFamily::exponential);

FitResult fit_gamma_mde(const std::vector<StageRecord>& records, const PolicyComponent& pc, const FitConfig& config);
FitResult fit_beta_mde(const std::vector<StageRecord>& records, const ModelQFunction& model, const FitConfig& config);
FitResult fit_ml(const std::vector<StageRecord>& records, const ModelQFunction& model, const FitConfig& config);

/// Dispatches on config.method. A beta fit with index 0 runs the extended KL
/// fit and says so in FitResult::note.
FitResult fit(const std::vector<StageRecord>& records, const ModelQFunction& model, const FitConfig& config);

/// Multinomial logit p(a | x) with the first action as reference.
class PropensityModel {
 public:
  PropensityModel(ActionSet actions, Vector center, Vector scale, std::vector<Index> columns, Matrix coef);

  const ActionSet& actions() const { return actions_; }
  /// Probabilities in action order, clamped to [1e-6, 1 - 1e-6].
  std::vector<double> probabilities(const Covariate& x) const;
  double probability(const Covariate& x, Action a) const;

  std::vector<std::string> warnings;

 private:
  ActionSet actions_;
  Vector center_, scale_;
  std::vector<Index> columns_;  // kept (non-constant) covariate columns
  Matrix coef_;                 // (m - 1) x (1 + kept columns)
};

inline constexpr double kPropensityClamp = 1e-6;

/// Fits stage t on the stage history. Throws DegenerateError when fewer than
/// two actions are observed or an action of `actions` never occurs.
PropensityModel fit_propensity(const TrajectoryDataset& data, std::size_t t = 0);
PropensityModel fit_propensity(const TrajectoryDataset& data, std::size_t t, const ActionSet& actions);

/// Copy of `data` with every stage propensity replaced by a fitted one.
TrajectoryDataset with_fitted_propensities(const TrajectoryDataset& data, std::vector<std::string>* warnings = nullptr);

struct BackwardResult {
  std::vector<FitResult> stages;    // policy fits, stage 1 first
  std::vector<FitResult> plug_ins;  // ML fits used for pseudo-outcomes (stages 2..T)
  std::vector<PolicyComponent> policies;
  std::size_t clamped_outcomes = 0;
  std::vector<std::string> warnings;

  /// Greedy action of stage t (0-based) at history h.
  Action decide(std::size_t t, const Covariate& h) const { return policies.at(t).greedy(h); }
};

/// Backward induction over stages T, ..., 1. templates[t] describes stage t
/// on the flattened history; its nuisance drives the ML plug-in that forms
/// pseudo-outcomes Y_t + Q_{t+1}(H_{t+1}, D_{t+1}(H_{t+1})).
BackwardResult fit_backward(const TrajectoryDataset& data, const std::vector<ModelQFunction>& templates,
                            const FitConfig& config);

}  // namespace powerdtr
