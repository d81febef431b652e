#pragma once

// Scenario generators and the Monte Carlo replication harness.
//
// The single-stage design: X ~ N(1, sd), A uniform on {1, 2, 3} with
// propensity 1/3, Y exponential with mean exp{f(X)} exp{X psi1 A + psi0 A}.
// The correct scenario uses f = alpha1 x + alpha0; the misspecified one uses
// f = -(x - 1)^2, which the working nuisance cannot represent.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "powerdtr/estimators.hpp"

namespace powerdtr {

enum class Scenario { correct, misspecified, custom };

std::string to_string(Scenario s);
Scenario scenario_from_string(const std::string& name);

struct ScenarioConfig {
  Scenario scenario = Scenario::correct;
  std::size_t n = 500;
  std::size_t reps = 300;
  double gamma = -1.5;
  double beta = -1.5;
  std::uint64_t seed = 0;
  double covariate_sd = 0.5;
  std::vector<Method> methods{Method::gamma_mde, Method::beta_mde};
  double psi1 = 2.0;
  double psi0 = -1.0;
  double alpha1 = -1.0;
  double alpha0 = -2.0;
  /// Nuisance f(x) of the custom scenario.
  std::function<double(double)> custom_nuisance;
  /// Optimizer settings; method, index and seed are set per fit.
  FitConfig fit;
};

ActionSet simulation_actions();

/// True conditional mean Q(x, a) of the configured scenario.
double true_q(const ScenarioConfig& config, double x, Action a);

TrajectoryDataset generate_correct(const ScenarioConfig& config, std::uint64_t rep_seed);
TrajectoryDataset generate_misspecified(const ScenarioConfig& config, std::uint64_t rep_seed);
/// Dispatches on config.scenario.
TrajectoryDataset generate(const ScenarioConfig& config, std::uint64_t rep_seed);

/// Working model: s0(a) = s1(a) = a, t(x) = x, nuisance alpha1 x + alpha0.
ModelQFunction simulation_model();

struct ReplicationReport {
  Method method = Method::gamma_mde;
  double index = 0.0;
  /// Truth and estimates in the internal layout (psi0, psi1).
  Vector truth;
  std::vector<Vector> per_rep_estimates;
  std::vector<bool> converged;
  Vector mean;
  Vector rmse;
  std::size_t failures = 0;

  double mean_psi1() const { return mean[1]; }
  double mean_psi0() const { return mean[0]; }
  double rmse_psi1() const { return rmse[1]; }
  double rmse_psi0() const { return rmse[0]; }
};

/// Raised when more than 20% of the fits of some method fail. Carries every
/// report so callers can still inspect and write them.
class HarnessError : public Error {
 public:
  HarnessError(const std::string& what, std::vector<ReplicationReport> reports)
      : Error(what), reports_(std::move(reports)) {}
  const std::vector<ReplicationReport>& reports() const { return reports_; }

 private:
  std::vector<ReplicationReport> reports_;
};

inline constexpr double kMaxFailureRate = 0.2;

/// Aggregates mean and RMSE over converged fits only.
void aggregate(ReplicationReport& report);

/// One report per configured method, in config.methods order. Replication r
/// uses the dataset generated with seed config.seed + r for every method.
std::vector<ReplicationReport> run_replications(const ScenarioConfig& config);

/// Worker count: DTR_THREADS when set to a positive integer, else the core count.
std::size_t worker_count();

/// Runs body(i) for i in [0, count) on worker_count() threads.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body);

/// Synthetic two-stage scenario with stagewise multiplicative truths.
///   X1 ~ N(1, x1_sd), A1 uniform, Y1 ~ Exp(mean exp{-1 + e1 A1 (x1 - 0.5)})
///   X2 = 0.5 X1 + 0.5 + N(0, x2_noise), A2 uniform
///   Y2 ~ Exp(mean exp{e1 A1 (x1 - 0.5) - 0.5 - 0.2 x2 + e2 A2 (1 - 1.5 x2)})
/// so that Q1(h1, a1) = exp{e1 a1 (x1 - 0.5)} c(x1) and the optimal rules are
/// a1 = 3 iff x1 > 0.5 and a2 = 3 iff x2 < 2/3 (else action 1).
struct TwoStageScenario {
  double effect1 = 1.0;
  double effect2 = 1.5;
  double x1_sd = 0.3;
  double x2_noise = 0.2;

  TrajectoryDataset generate(std::size_t n, std::uint64_t seed) const;
  /// Optimal action at stage t (0-based) for history h.
  Action oracle_action(std::size_t t, const Covariate& h) const;
  /// Working models on the flattened histories (x1) and (x1, a1, x2).
  std::vector<ModelQFunction> templates() const;
};

}  // namespace powerdtr
