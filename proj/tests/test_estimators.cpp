#include <doctest.h>

#include <cmath>
#include <random>

#include "powerdtr/estimators.hpp"
#include "powerdtr/simulate.hpp"
#include "support.hpp"

using namespace powerdtr;
using doctest::Approx;

namespace {

PolicyComponent scalar_pc() { return PolicyComponent(FeatureMaps::linear_numeric_action(simulation_actions(), 1)); }

Vector truth_psi() { return (Vector(2) << -1.0, 2.0).finished(); }
Vector truth_alpha() { return (Vector(2) << -1.0, -2.0).finished(); }

StageRecord rec(double x, Action a, double y, double p) { return {Covariate::Constant(1, x), a, y, p}; }

std::vector<StageRecord> correct_records(std::size_t n, std::uint64_t seed) {
  ScenarioConfig cfg;
  cfg.n = n;
  return stage_records(generate_correct(cfg, seed), 0);
}

struct Moments {
  Vector mean;
  Vector se;
};

template <class F>
Moments column_moments(std::size_t n, F row) {
  Vector sum, sq;
  for (std::size_t i = 0; i < n; ++i) {
    const Vector v = row(i);
    if (i == 0) {
      sum = Vector::Zero(v.size());
      sq = Vector::Zero(v.size());
    }
    sum += v;
    sq += v.cwiseProduct(v);
  }
  const double nn = static_cast<double>(n);
  Vector mean = sum / nn;
  Vector var = (sq / nn - mean.cwiseProduct(mean)) * nn / (nn - 1.0);
  return {mean, (var / nn).cwiseSqrt()};
}

// Feature maps with an action-constant column in s0, so that psi0[1] shifts g by a constant.
PolicyComponent shifted_pc() {
  FeatureMaps fm("shift", simulation_actions(), 1, [](Action a) { return (Vector(2) << a, 1.0).finished(); },
                 [](Action a) { return Vector::Constant(1, a); }, [](const Covariate& x) { return Vector(x); });
  return PolicyComponent(fm);
}

}  // namespace

TEST_CASE("gamma loss at zero parameters collapses to the mean weight") {
  auto records = correct_records(200, 3);
  double mean_w = 0.0;
  for (const auto& r : records) mean_w += r.y / r.p / records.size();
  for (double g : {-1.5, 0.5, 2.0}) {
    const double want = -(1.0 / g) * std::pow(3.0, -g / (g + 1.0)) * mean_w;
    CHECK(gamma_loss(Vector::Zero(2), records, scalar_pc(), g) == Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("gamma loss on one record") {
  // g(1, a) = a under (psi1, psi0) = (2, -1); gamma = 1 squares the denominator weights.
  std::vector<StageRecord> one{rec(1.0, 2, 1.0, 1.0 / 3.0)};
  const double want = -3.0 * std::exp(2.0) / std::sqrt(std::exp(2.0) + std::exp(4.0) + std::exp(6.0));
  CHECK(gamma_loss(truth_psi(), one, scalar_pc(), 1.0) == Approx(want).epsilon(1e-12));
}

TEST_CASE("gamma loss validation") {
  std::vector<StageRecord> one{rec(1.0, 2, 1.0, 0.5)};
  CHECK_THROWS_AS(gamma_loss(truth_psi(), one, scalar_pc(), 0.0), SingularIndexError);
  CHECK_THROWS_AS(gamma_loss(truth_psi(), one, scalar_pc(), -1.0), SingularIndexError);
  std::vector<StageRecord> bad{rec(1.0, 2, 1.0, 0.0)};
  CHECK_THROWS_AS(gamma_loss(truth_psi(), bad, scalar_pc(), 1.0), InvalidRecordError);
  std::vector<StageRecord> outside{rec(1.0, 7, 1.0, 0.5)};
  CHECK_THROWS_AS(gamma_loss(truth_psi(), outside, scalar_pc(), 1.0), InvalidRecordError);
}

TEST_CASE("gamma loss ignores action-constant shifts of g") {
  auto records = correct_records(100, 4);
  auto pc = shifted_pc();
  for (double c : {-2.0, 0.5, 3.0}) {
    const Vector base = (Vector(3) << -1.0, 0.0, 2.0).finished();
    Vector moved = base;
    moved[1] = c;
    CHECK(gamma_loss(moved, records, pc, -1.5) == Approx(gamma_loss(base, records, pc, -1.5)).epsilon(1e-12));
  }
}

TEST_CASE("gamma loss depends on records only through Y / p and the g-features") {
  auto records = correct_records(50, 5);
  auto rescaled = records;
  for (auto& r : rescaled) {
    r.y *= 0.5;
    r.p *= 0.5;
  }
  const Vector psi = (Vector(2) << 0.3, -0.7).finished();
  CHECK(gamma_loss(psi, rescaled, scalar_pc(), 0.5) == Approx(gamma_loss(psi, records, scalar_pc(), 0.5)).epsilon(1e-14));
}

TEST_CASE("estimating function special cases") {
  FeatureMaps flat("flat", simulation_actions(), 1, [](Action) { return Vector::Constant(1, 1.0); },
                   [](Action) { return Vector::Constant(1, 1.0); }, [](const Covariate& x) { return Vector(x); });
  PolicyComponent pc(flat);
  const auto e = gamma_estimating_function((Vector(2) << 0.4, 1.1).finished(), rec(0.8, 2, 1.7, 0.25), pc, 0.5);
  CHECK(e.norm() < 1e-14);

  // gamma = -1: W e^{-g_A} (G_A - mean_a G_a)
  const auto r = rec(0.8, 3, 1.7, 0.25);
  const Vector psi = truth_psi();
  const double gA = -1.0 * 3 + 2.0 * 0.8 * 3;
  const Vector GA = (Vector(2) << 3.0, 0.8 * 3).finished();
  const Vector Gbar = (Vector(2) << 2.0, 0.8 * 2).finished();
  const Vector want = (1.7 / 0.25) * std::exp(-gA) * (GA - Gbar);
  CHECK((gamma_estimating_function(psi, r, scalar_pc(), -1.0) - want).norm() < 1e-12 * want.norm());
}

TEST_CASE("property: estimating function sums to minus the loss gradient") {
  std::mt19937_64 rng(51);
  std::normal_distribution<double> z;
  auto records = correct_records(40, 6);
  const double n = static_cast<double>(records.size());
  for (double g : {-1.5, 0.5, 1.0}) {
    for (int rep = 0; rep < 20; ++rep) {
      const Vector psi = (Vector(2) << z(rng), z(rng)).finished();
      Vector sum = Vector::Zero(2);
      for (const auto& r : records) sum += gamma_estimating_function(psi, r, scalar_pc(), g);
      Vector fd(2);
      for (Index j = 0; j < 2; ++j) {
        const double h = 1e-6 * std::max(1.0, std::abs(psi[j]));
        Vector up = psi, dn = psi;
        up[j] += h;
        dn[j] -= h;
        fd[j] = -n * (gamma_loss(up, records, scalar_pc(), g) - gamma_loss(dn, records, scalar_pc(), g)) / (2 * h);
      }
      CHECK((sum - fd).norm() <= 1e-5 * std::max(fd.norm(), 1e-8));
    }
  }
}

TEST_CASE("estimating functions are unbiased at the truth") {
  auto records = correct_records(100000, 7);
  for (double g : {-1.5, 1.0}) {
    auto m = column_moments(records.size(),
                            [&](std::size_t i) { return gamma_estimating_function(truth_psi(), records[i], scalar_pc(), g); });
    for (Index j = 0; j < m.mean.size(); ++j) CHECK(std::abs(m.mean[j]) < 3.0 * m.se[j]);
  }
  const auto model = simulation_model();
  auto m = column_moments(records.size(), [&](std::size_t i) {
    return ml_estimating_function(truth_alpha(), truth_psi(), records[i], model);
  });
  for (Index j = 0; j < m.mean.size(); ++j) CHECK(std::abs(m.mean[j]) < 3.0 * m.se[j]);
}

TEST_CASE("beta loss") {
  const auto model = simulation_model();
  std::vector<StageRecord> one{rec(0.7, 2, 1.0, 1.0)};
  for (double b : {-1.5, 0.5, 2.0})
    CHECK(beta_loss(Vector::Zero(2), Vector::Zero(2), one, model, b) == Approx(-1.0 / b + 3.0 / (b + 1.0)));
  CHECK_THROWS_AS(beta_loss(Vector::Zero(2), Vector::Zero(2), one, model, -1.0), SingularIndexError);
  const Vector shifted = (Vector(2) << 0.0, 0.5).finished();
  CHECK(beta_loss(shifted, Vector::Zero(2), one, model, -1.5) != Approx(beta_loss(Vector::Zero(2), Vector::Zero(2), one, model, -1.5)));

  auto records = correct_records(100000, 8);
  const double at_truth = beta_loss(truth_alpha(), truth_psi(), records, model, -1.5);
  for (const Vector& d : {(Vector(2) << 0.1, 0.0).finished(), (Vector(2) << 0.0, -0.1).finished()}) {
    CHECK(at_truth < beta_loss(truth_alpha(), truth_psi() + d, records, model, -1.5));
    CHECK(at_truth < beta_loss(truth_alpha() + d, truth_psi(), records, model, -1.5));
  }
}

TEST_CASE("ML loss") {
  const auto model = simulation_model();
  auto records = correct_records(30, 9);
  double mean_y = 0.0;
  for (const auto& r : records) mean_y += r.y / records.size();
  CHECK(ml_loss(Vector::Zero(2), Vector::Zero(2), records, model) == Approx(mean_y).epsilon(1e-12));
  std::vector<StageRecord> one{rec(0.2, 1, 1.0, 0.5)};
  CHECK(ml_loss(Vector::Zero(2), Vector::Zero(2), one, model) == Approx(1.0));
  const Vector huge = (Vector(2) << 0.0, -800.0).finished();
  CHECK_THROWS_AS(ml_loss(huge, Vector::Zero(2), one, model), EvaluationError);
}

TEST_CASE("noiseless single-covariate data recover the truth") {
  // One covariate value, every action observed with p = 1/m and Y = Q.
  const ActionSet acts = simulation_actions();
  FeatureMaps onehot("onehot", acts, 1,
                     [](Action a) {
                       Vector v = Vector::Zero(2);
                       if (a > 1) v[a - 2] = 1.0;
                       return v;
                     },
                     [](Action) { return Vector(); }, [](const Covariate& x) { return Vector(x); });
  const Vector psi0 = (Vector(2) << 0.7, -0.4).finished();
  const double f0 = -0.3;
  std::vector<StageRecord> records;
  for (Action a : {1, 2, 3}) {
    const double g = a == 1 ? 0.0 : psi0[a - 2];
    records.push_back(rec(0.5, a, std::exp(f0 + g), 1.0 / 3.0));
  }
  PolicyComponent pc(onehot);
  FitConfig cfg;
  cfg.index = -1.5;
  auto r = fit_gamma_mde(records, pc, cfg);
  CHECK(r.converged);
  CHECK((r.psi_hat - psi0).norm() < 1e-6);

  auto basis = [](const Covariate&) { return Vector::Constant(1, 1.0); };
  ModelQFunction model(NuisanceComponent::parametric("intercept", 1, basis), pc);
  cfg.method = Method::beta_mde;
  auto b = fit(records, model, cfg);
  CHECK(b.converged);
  CHECK((b.psi_hat - psi0).norm() < 1e-6);
  CHECK(b.alpha_hat[0] == Approx(f0).epsilon(1e-6));
}

TEST_CASE("fitting the correct scenario") {
  auto records = correct_records(500, 10);
  FitConfig cfg;
  auto r = fit_gamma_mde(records, scalar_pc(), cfg);
  REQUIRE(r.converged);
  const Matrix cov = r.psi_covariance();
  REQUIRE(cov.rows() == 2);
  CHECK((cov - cov.transpose()).norm() == 0.0);
  CHECK(Eigen::SelfAdjointEigenSolver<Matrix>(cov).eigenvalues().minCoeff() >= 0.0);
  for (Index j = 0; j < 2; ++j) CHECK(std::abs(r.psi_hat[j] - truth_psi()[j]) < 3.0 * std::sqrt(cov(j, j)));

  auto again = fit_gamma_mde(records, scalar_pc(), cfg);
  CHECK(again.psi_hat == r.psi_hat);
  CHECK(again.loss == r.loss);

  SUBCASE("nelder-mead reaches the same optimum") {
    FitConfig nm = cfg;
    nm.optimizer = OptimizerKind::nelder_mead;
    auto s = fit_gamma_mde(records, scalar_pc(), nm);
    CHECK(s.converged);
    CHECK((s.psi_hat - r.psi_hat).norm() < 1e-5);
  }
  SUBCASE("gamma = -1 solves the unweighted equation") {
    FitConfig one = cfg;
    one.index = -1.0;
    auto s = fit_gamma_mde(records, scalar_pc(), one);
    CHECK(s.converged);
    CHECK_FALSE(s.note.empty());
    Vector mean = Vector::Zero(2);
    for (const auto& rr : records) mean += gamma_estimating_function(s.psi_hat, rr, scalar_pc(), -1.0) / records.size();
    CHECK(mean.cwiseAbs().maxCoeff() <= 1e-6);
  }
  SUBCASE("beta = 0 runs the extended KL fit") {
    FitConfig b = cfg;
    b.method = Method::beta_mde;
    b.index = 0.0;
    auto s = fit(records, simulation_model(), b);
    CHECK(s.note.find("extended KL") != std::string::npos);
  }
  SUBCASE("ML recovers both parameter blocks") {
    FitConfig m = cfg;
    m.method = Method::ml;
    auto s = fit(records, simulation_model(), m);
    CHECK(s.converged);
    CHECK(s.alpha_hat.size() == 2);
    CHECK(s.covariance.rows() == 4);
    for (Index j = 0; j < 2; ++j) CHECK(std::abs(s.psi_hat[j] - truth_psi()[j]) < 4.0 * std::sqrt(s.psi_covariance()(j, j)));
  }
}

TEST_CASE("sandwich variance scales like 1 / n") {
  FitConfig cfg;
  auto small = fit_gamma_mde(correct_records(500, 11), scalar_pc(), cfg);
  auto large = fit_gamma_mde(correct_records(2000, 12), scalar_pc(), cfg);
  REQUIRE(small.converged);
  REQUIRE(large.converged);
  for (Index j = 0; j < 2; ++j) {
    const double ratio = (500.0 * small.covariance(j, j)) / (2000.0 * large.covariance(j, j));
    CHECK(ratio > 0.5);
    CHECK(ratio < 2.0);
  }
}

TEST_CASE("flat losses are not reported as converged") {
  // Every record shares one covariate, so psi1 and psi0 only enter through x psi1 + psi0.
  std::vector<StageRecord> records;
  std::mt19937_64 rng(13);
  std::exponential_distribution<double> y(1.0);
  for (int i = 0; i < 60; ++i) records.push_back(rec(1.0, 1 + i % 3, y(rng), 1.0 / 3.0));
  auto r = fit_gamma_mde(records, scalar_pc(), FitConfig{});
  CHECK_FALSE(r.converged);
  CHECK_FALSE(r.diagnostics.empty());
}

TEST_CASE("propensity fitting") {
  auto traj = [](double x, Action a) { return Trajectory{"i", {Stage{Covariate::Constant(1, x), a, 1.0, {}}}}; };
  SUBCASE("intercept-only fit equals the empirical frequencies") {
    std::vector<Trajectory> t;
    for (int i = 0; i < 100; ++i) t.push_back(traj(0.0, i < 50 ? 1 : (i < 75 ? 2 : 3)));
    auto model = fit_propensity(TrajectoryDataset(t));
    const auto p = model.probabilities(Covariate::Zero(1));
    CHECK(p[0] == Approx(0.5).epsilon(1e-6));
    CHECK(p[1] == Approx(0.25).epsilon(1e-6));
    CHECK(p[2] == Approx(0.25).epsilon(1e-6));
  }
  SUBCASE("uniform design") {
    ScenarioConfig cfg;
    cfg.n = 3000;
    auto data = generate_correct(cfg, 14);
    auto model = fit_propensity(data);
    const double se = std::sqrt((1.0 / 3.0) * (2.0 / 3.0) / 3000.0);
    for (double x : {0.5, 1.0, 1.5})
      for (double p : model.probabilities(Covariate::Constant(1, x))) CHECK(std::abs(p - 1.0 / 3.0) < 3.0 * se);
  }
  SUBCASE("separation warns and clamps") {
    std::vector<Trajectory> t;
    for (int i = 0; i < 60; ++i) {
      const double x = i / 10.0;
      t.push_back(traj(x, x > 3.0 ? 2 : 1));
    }
    auto model = fit_propensity(TrajectoryDataset(t));
    CHECK_FALSE(model.warnings.empty());
    const auto p = model.probabilities(Covariate::Constant(1, 0.0));
    CHECK(p[1] >= kPropensityClamp);
    CHECK(p[0] <= 1.0 - kPropensityClamp);
  }
  SUBCASE("unobserved action") {
    std::vector<Trajectory> t{traj(0.0, 1), traj(1.0, 1)};
    CHECK_THROWS_AS(fit_propensity(TrajectoryDataset(t)), DegenerateError);
    std::vector<Trajectory> u{traj(0.0, 1), traj(1.0, 2)};
    CHECK_THROWS_AS(fit_propensity(TrajectoryDataset(u), 0, simulation_actions()), DegenerateError);
  }
  SUBCASE("filling a dataset") {
    std::vector<Trajectory> t;
    for (int i = 0; i < 30; ++i) t.push_back(traj(i * 0.1, 1 + i % 3));
    auto filled = with_fitted_propensities(TrajectoryDataset(t));
    CHECK(filled.has_propensities());
    CHECK_THROWS_AS(stage_records(TrajectoryDataset(t)), InvalidRecordError);
  }
}

TEST_CASE("backward induction") {
  TwoStageScenario sc;
  FitConfig cfg;
  SUBCASE("one stage reduces to a single fit") {
    ScenarioConfig sim;
    sim.n = 300;
    auto data = generate_correct(sim, 15);
    auto b = fit_backward(data, {simulation_model()}, cfg);
    auto single = fit_gamma_mde(stage_records(data), scalar_pc(), cfg);
    CHECK(b.stages.size() == 1);
    CHECK(b.stages[0].psi_hat == single.psi_hat);
  }
  SUBCASE("two stages track the oracle") {
    auto data = sc.generate(1000, 16);
    auto b = fit_backward(data, sc.templates(), cfg);
    REQUIRE(b.stages.size() == 2);
    CHECK(b.stages[0].converged);
    CHECK(b.stages[1].converged);
    auto test = sc.generate(500, 17);
    int agree = 0, total = 0;
    for (std::size_t i = 0; i < test.size(); ++i)
      for (std::size_t t = 0; t < 2; ++t) {
        const Covariate h = test.history(i, t);
        agree += b.decide(t, h) == sc.oracle_action(t, h);
        ++total;
      }
    CHECK(agree >= 0.9 * total);
  }
  SUBCASE("no second-stage effect matches a single fit on summed outcomes") {
    std::mt19937_64 rng(18);
    std::normal_distribution<double> xd(1.0, 0.5);
    std::uniform_int_distribution<int> act(1, 3);
    std::vector<Trajectory> t;
    std::vector<Trajectory> summed;
    for (int i = 0; i < 1500; ++i) {
      const double x1 = xd(rng), x2 = xd(rng);
      const Action a1 = act(rng), a2 = act(rng);
      const double y1 = std::exponential_distribution<double>(std::exp(-(a1 * (x1 - 0.5))))(rng);
      const double y2 = std::exponential_distribution<double>(std::exp(-(a1 * (x1 - 0.5) - 1.0)))(rng);
      t.push_back({"i", {Stage{Covariate::Constant(1, x1), a1, y1, 1.0 / 3.0},
                         Stage{Covariate::Constant(1, x2), a2, y2, 1.0 / 3.0}}});
      summed.push_back({"i", {Stage{Covariate::Constant(1, x1), a1, y1 + y2, 1.0 / 3.0}}});
    }
    auto b = fit_backward(TrajectoryDataset(t), sc.templates(), cfg);
    auto single = fit_gamma_mde(stage_records(TrajectoryDataset(summed)),
                                PolicyComponent(FeatureMaps::preset("current_covariate", simulation_actions(), 1, 1)), cfg);
    REQUIRE(b.stages[0].converged);
    REQUIRE(single.converged);
    const Matrix cb = b.stages[0].psi_covariance(), cs = single.psi_covariance();
    for (Index j = 0; j < 2; ++j)
      CHECK(std::abs(b.stages[0].psi_hat[j] - single.psi_hat[j]) < 3.0 * std::sqrt(cb(j, j) + cs(j, j)));
  }
}
