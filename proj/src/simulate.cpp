#include "powerdtr/simulate.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <limits>
#include <mutex>
#include <random>
#include <sstream>
#include <thread>

namespace powerdtr {

std::string to_string(Scenario s) {
  switch (s) {
    case Scenario::correct: return "correct";
    case Scenario::misspecified: return "misspecified";
    case Scenario::custom: return "custom";
  }
  return "unknown";
}

Scenario scenario_from_string(const std::string& name) {
  if (name == "correct") return Scenario::correct;
  if (name == "misspecified") return Scenario::misspecified;
  if (name == "custom") return Scenario::custom;
  throw StructuralError("unknown scenario '" + name + "' (expected correct or misspecified)");
}

ActionSet simulation_actions() { return ActionSet({1, 2, 3}); }

namespace {

double nuisance_value(const ScenarioConfig& config, double x) {
  switch (config.scenario) {
    case Scenario::correct: return config.alpha1 * x + config.alpha0;
    case Scenario::misspecified: return -(x - 1.0) * (x - 1.0);
    case Scenario::custom:
      if (!config.custom_nuisance) throw StructuralError("custom scenario needs a nuisance function");
      return config.custom_nuisance(x);
  }
  return 0.0;
}

TrajectoryDataset draw(const ScenarioConfig& config, std::uint64_t rep_seed) {
  if (config.n == 0) throw StructuralError("n must be positive");
  if (!(config.covariate_sd > 0.0)) throw StructuralError("covariate_sd must be positive");
  std::mt19937_64 rng(rep_seed);
  std::normal_distribution<double> cov(1.0, config.covariate_sd);
  std::uniform_int_distribution<int> act(1, 3);
  std::vector<Trajectory> trajs;
  trajs.reserve(config.n);
  for (std::size_t i = 0; i < config.n; ++i) {
    const double x = cov(rng);
    const Action a = act(rng);
    std::exponential_distribution<double> outcome(1.0 / true_q(config, x, a));
    const double y = outcome(rng);
    trajs.push_back({std::to_string(i + 1), {Stage{Covariate::Constant(1, x), a, y, 1.0 / 3.0}}});
  }
  return TrajectoryDataset(std::move(trajs));
}

}  // namespace

double true_q(const ScenarioConfig& config, double x, Action a) {
  return std::exp(nuisance_value(config, x) + x * config.psi1 * a + config.psi0 * a);
}

TrajectoryDataset generate_correct(const ScenarioConfig& config, std::uint64_t rep_seed) {
  ScenarioConfig c = config;
  c.scenario = Scenario::correct;
  return draw(c, rep_seed);
}

TrajectoryDataset generate_misspecified(const ScenarioConfig& config, std::uint64_t rep_seed) {
  ScenarioConfig c = config;
  c.scenario = Scenario::misspecified;
  return draw(c, rep_seed);
}

TrajectoryDataset generate(const ScenarioConfig& config, std::uint64_t rep_seed) { return draw(config, rep_seed); }

ModelQFunction simulation_model() {
  const ActionSet actions = simulation_actions();
  return ModelQFunction(NuisanceComponent::linear_with_intercept(1),
                        PolicyComponent(FeatureMaps::linear_numeric_action(actions, 1)));
}

void aggregate(ReplicationReport& report) {
  const Index p = report.truth.size();
  report.mean = Vector::Zero(p);
  report.rmse = Vector::Zero(p);
  report.failures = 0;
  std::size_t ok = 0;
  for (std::size_t r = 0; r < report.per_rep_estimates.size(); ++r) {
    if (!report.converged[r]) {
      ++report.failures;
      continue;
    }
    report.mean += report.per_rep_estimates[r];
    report.rmse += (report.per_rep_estimates[r] - report.truth).array().square().matrix();
    ++ok;
  }
  if (ok == 0) {
    report.mean.setConstant(std::numeric_limits<double>::quiet_NaN());
    report.rmse.setConstant(std::numeric_limits<double>::quiet_NaN());
    return;
  }
  report.mean /= static_cast<double>(ok);
  report.rmse = (report.rmse / static_cast<double>(ok)).array().sqrt().matrix();
}

std::size_t worker_count() {
  if (const char* env = std::getenv("DTR_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body) {
  const std::size_t workers = std::min(worker_count(), std::max<std::size_t>(count, 1));
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto run = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        body(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  if (workers <= 1) {
    run();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(run);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
}

std::vector<ReplicationReport> run_replications(const ScenarioConfig& config) {
  if (config.reps == 0) throw StructuralError("reps must be positive");
  if (config.methods.empty()) throw StructuralError("no methods selected");
  const ModelQFunction model = simulation_model();
  Vector truth(2);
  truth << config.psi0, config.psi1;

  const std::size_t k = config.methods.size();
  std::vector<std::vector<FitResult>> fits(config.reps, std::vector<FitResult>(k));
  parallel_for(config.reps, [&](std::size_t r) {
    const auto data = generate(config, config.seed + r);
    const auto records = stage_records(data, 0);
    for (std::size_t j = 0; j < k; ++j) {
      FitConfig fc = config.fit;
      fc.method = config.methods[j];
      fc.index = fc.method == Method::gamma_mde ? config.gamma : fc.method == Method::beta_mde ? config.beta : 0.0;
      fc.seed = config.seed + r;
      fc.compute_covariance = false;
      fits[r][j] = fit(records, model, fc);
    }
  });

  std::vector<ReplicationReport> reports;
  std::ostringstream problems;
  for (std::size_t j = 0; j < k; ++j) {
    ReplicationReport rep;
    rep.method = config.methods[j];
    rep.index = rep.method == Method::gamma_mde ? config.gamma : rep.method == Method::beta_mde ? config.beta : 0.0;
    rep.truth = truth;
    for (std::size_t r = 0; r < config.reps; ++r) {
      rep.per_rep_estimates.push_back(fits[r][j].psi_hat);
      rep.converged.push_back(fits[r][j].converged);
    }
    aggregate(rep);
    const double rate = static_cast<double>(rep.failures) / static_cast<double>(config.reps);
    if (rate > kMaxFailureRate)
      problems << to_string(rep.method) << ": " << rep.failures << " of " << config.reps << " fits failed; ";
    reports.push_back(std::move(rep));
  }
  const std::string msg = problems.str();
  if (!msg.empty()) throw HarnessError("more than 20% failed fits (" + msg.substr(0, msg.size() - 2) + ")", reports);
  return reports;
}

TrajectoryDataset TwoStageScenario::generate(std::size_t n, std::uint64_t seed) const {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> x1d(1.0, x1_sd), noise(0.0, x2_noise);
  std::uniform_int_distribution<int> act(1, 3);
  std::vector<Trajectory> trajs;
  trajs.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x1 = x1d(rng);
    const Action a1 = act(rng);
    const double y1 = std::exponential_distribution<double>(std::exp(1.0 - effect1 * a1 * (x1 - 0.5)))(rng);
    const double x2 = 0.5 * x1 + 0.5 + noise(rng);
    const Action a2 = act(rng);
    const double log_q2 = effect1 * a1 * (x1 - 0.5) - 0.5 - 0.2 * x2 + effect2 * a2 * (1.0 - 1.5 * x2);
    const double y2 = std::exponential_distribution<double>(std::exp(-log_q2))(rng);
    trajs.push_back({std::to_string(i + 1),
                     {Stage{Covariate::Constant(1, x1), a1, y1, 1.0 / 3.0},
                      Stage{Covariate::Constant(1, x2), a2, y2, 1.0 / 3.0}}});
  }
  return TrajectoryDataset(std::move(trajs));
}

Action TwoStageScenario::oracle_action(std::size_t t, const Covariate& h) const {
  if (t == 0) return h[0] > 0.5 ? 3 : 1;
  return h[h.size() - 1] < 2.0 / 3.0 ? 3 : 1;
}

std::vector<ModelQFunction> TwoStageScenario::templates() const {
  const ActionSet actions = simulation_actions();
  ModelQFunction stage1(NuisanceComponent::linear_with_intercept(1),
                        PolicyComponent(FeatureMaps::preset("current_covariate", actions, 1, 1)));
  auto basis = [](const Covariate& h) {
    Vector b(5);
    b << 1.0, h[0], h[1], h[0] * h[1], h[2];
    return b;
  };
  ModelQFunction stage2(NuisanceComponent::parametric("two_stage_history", 5, basis),
                        PolicyComponent(FeatureMaps::preset("current_covariate", actions, 3, 1)));
  return {stage1, stage2};
}

}  // namespace powerdtr
