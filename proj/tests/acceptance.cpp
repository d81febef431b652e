// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <chrono>
#include <algorithm>
#include <cmath>
#include <limits>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "powerdtr/cli.hpp"
#include "powerdtr/divergence.hpp"
#include "powerdtr/estimators.hpp"
#include "powerdtr/io.hpp"
#include "powerdtr/simulate.hpp"
#include "support.hpp"

using namespace powerdtr;

namespace {

int failures = 0;

void report(bool ok, const std::string& name, const std::string& detail, double seconds) {
  if (!ok) ++failures;
  std::printf("%s %s: %s [%.1fs]\n", ok ? "PASS" : "FAIL", name.c_str(), detail.c_str(), seconds);
  std::fflush(stdout);
}

template <class F>
void criterion(const std::string& name, F body) {
  const auto start = std::chrono::steady_clock::now();
  bool ok = false;
  std::string detail;
  try {
    ok = body(detail);
  } catch (const std::exception& e) {
    ok = false;
    detail += std::string(" exception: ") + e.what();
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  report(ok, name, detail, secs);
}

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::string pair_str(double a, double b) { return "(" + fmt("%.3f", a) + ", " + fmt("%.3f", b) + ")"; }

struct ScenarioRun {
  std::vector<ReplicationReport> reports;
  std::string harness;
};

ScenarioRun run_study(Scenario s) {
  ScenarioConfig cfg;
  cfg.scenario = s;
  cfg.n = 500;
  cfg.reps = 300;
  cfg.gamma = -1.5;
  cfg.beta = -1.5;
  cfg.seed = 7;
  ScenarioRun out;
  try {
    out.reports = run_replications(cfg);
  } catch (const HarnessError& e) {
    out.reports = e.reports();
    out.harness = e.what();
  }
  return out;
}

std::string describe(const ReplicationReport& r) {
  return to_string(r.method) + " mean " + pair_str(r.mean_psi1(), r.mean_psi0()) + " rmse " +
         pair_str(r.rmse_psi1(), r.rmse_psi0()) + " failures " + std::to_string(r.failures) + "/" +
         std::to_string(r.per_rep_estimates.size());
}

bool within(double v, double target, double tol) { return std::abs(v - target) <= tol; }

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

int cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  return run_cli(args, out, err);
}

}  // namespace

int main() {
  criterion("Simulation study, correct nuisance", [](std::string& d) {
    auto run = run_study(Scenario::correct);
    const auto& g = run.reports.at(0);
    const auto& b = run.reports.at(1);
    d = describe(g) + "; " + describe(b);
    if (!run.harness.empty()) d += "; harness error: " + run.harness;
    const bool gamma_mean = within(g.mean_psi1(), 2.0, 0.08) && within(g.mean_psi0(), -1.0, 0.08);
    const bool beta_mean = within(b.mean_psi1(), 2.0, 0.15) && within(b.mean_psi0(), -1.0, 0.15);
    const bool gamma_rmse = g.rmse_psi1() >= 0.15 && g.rmse_psi1() <= 0.45 && g.rmse_psi0() >= 0.15 && g.rmse_psi0() <= 0.45;
    return run.harness.empty() && gamma_mean && beta_mean && gamma_rmse;
  });

  criterion("Simulation study, misspecified nuisance", [](std::string& d) {
    auto run = run_study(Scenario::misspecified);
    const auto& g = run.reports.at(0);
    const auto& b = run.reports.at(1);
    d = describe(g) + "; " + describe(b);
    if (!run.harness.empty()) d += "; harness error: " + run.harness;
    const bool gamma_mean = within(g.mean_psi1(), 2.0, 0.1) && within(g.mean_psi0(), -1.0, 0.1);
    const bool beta_bias = b.mean_psi1() > 2.5 && b.rmse_psi1() > 1.5;
    return run.harness.empty() && gamma_mean && beta_bias;
  });

  const std::vector<double> gammas{-2.0, -1.5, -0.5, 0.5, 1.0, 2.0};

  criterion("Nonnegativity, kernel and quotient suite", [&](std::string& d) {
    std::mt19937_64 rng(101);
    int negative = 0, kernel = 0, quotient = 0, checked = 0;
    for (int rep = 0; rep < 1000; ++rep) {
      auto [q0, q1] = testing::random_pair(rng);
      auto eta = testing::random_eta(rng, q0.size());
      const auto scaled = q0.scaled(eta);
      for (double g : gammas) {
        double v = 0.0;
        try {
          v = gamma_divergence(q0, q1, g);
        } catch (const ConsistencyError&) {
          ++negative;
          continue;
        }
        if (v < -1e-12) ++negative;
        const double k = gamma_divergence(q0, scaled, g);
        if (k > 1e-10) ++kernel;
        const std::pair<const TabularQFunction*, double> cases[] = {{&q1, v}, {&scaled, k}};
        for (const auto& [a, val] : cases) {
          if (val <= 1e-10) {
            ++checked;
            if (!policy_equivalent(q0, *a)) ++quotient;
          }
        }
      }
    }
    d = "negative " + std::to_string(negative) + ", kernel violations " + std::to_string(kernel) +
        ", quotient violations " + std::to_string(quotient) + " of " + std::to_string(checked) + " near-zero cases";
    return negative == 0 && kernel == 0 && quotient == 0;
  });

  criterion("Second-argument scaling invariance", [&](std::string& d) {
    std::mt19937_64 rng(101);
    double worst = 0.0;
    for (int rep = 0; rep < 1000; ++rep) {
      auto [q0, q1] = testing::random_pair(rng);
      auto eta = testing::random_eta(rng, q0.size());
      const auto moved = q1.scaled(eta);
      for (double g : gammas) worst = std::max(worst, std::abs(gamma_divergence(q0, moved, g) - gamma_divergence(q0, q1, g)));
    }
    d = "max |D(q0, eta q1) - D(q0, q1)| = " + fmt("%.3g", worst);
    return worst <= 1e-10;
  });

  criterion("Limit (a) normalized KL at gamma = 1e-4", [](std::string& d) {
    std::mt19937_64 rng(102);
    double worst = 0.0;
    for (int rep = 0; rep < 500; ++rep) {
      auto [q0, q1] = testing::random_pair(rng);
      const double nkl = nkl_divergence(q0, q1);
      worst = std::max(worst, std::abs(gamma_divergence(q0, q1, 1e-4) - nkl) / nkl);
    }
    d = "max relative error " + fmt("%.3g", worst);
    return worst < 1e-3;
  });

  criterion("Limit (b) geometric-mean form at gamma = -1 + 1e-3", [](std::string& d) {
    std::mt19937_64 rng(103);
    const double g = -1.0 + 1e-3;
    double worst = 0.0;
    for (int rep = 0; rep < 500; ++rep) {
      auto [q0, q1] = testing::random_pair(rng);
      const double m = static_cast<double>(q0.num_actions());
      const double scaled = gamma_divergence_scaled(q0, q1, g, -std::log(m) / (1.0 + g));
      const double limit = gm_limit_divergence(q0, q1);
      worst = std::max(worst, std::abs(scaled - limit) / limit);
    }
    d = "max relative error " + fmt("%.3g", worst) + " (scale m^(-1/(1+gamma)))";
    return worst < 1e-2;
  });

  criterion("Limit (c) harmonic-mean identity", [](std::string& d) {
    std::mt19937_64 rng(104);
    double worst = 0.0;
    for (int rep = 0; rep < 1000; ++rep) {
      auto q = testing::random_pair(rng).q0;
      auto h = harmonic_identity_check(q);
      worst = std::max(worst, std::abs(h.lhs - h.rhs) / std::abs(h.rhs));
    }
    d = "max relative error " + fmt("%.3g", worst);
    return worst <= 1e-12;
  });

  criterion("Limit (d) value-gap limit", [](std::string& d) {
    std::mt19937_64 rng(105);
    int instances = 0, not_closer = 0, exact = 0, margin_cases = 0, margin_misses = 0;
    double worst_margin = 0.0;
    auto log_margin = [](const TabularQFunction& q) {
      double m = std::numeric_limits<double>::infinity();
      for (const auto& p : q.points()) {
        std::vector<double> v = p.q;
        std::sort(v.begin(), v.end(), std::greater<>());
        m = std::min(m, std::log(v[0]) - std::log(v[1]));
      }
      return m;
    };
    while (instances < 100) {
      auto [q0, q1] = testing::random_pair(rng);
      if (log_margin(q0) < 1e-6 || log_margin(q1) < 1e-6) continue;
      ++instances;
      const auto pts = value_gap_limit(q0, q1, {10.0, 200.0});
      const double e10 = std::abs(pts[0].scaled_divergence - pts[0].value_gap);
      const double e200 = std::abs(pts[1].scaled_divergence - pts[1].value_gap);
      if (e10 == 0.0 && e200 == 0.0)
        ++exact;  // already exact in double precision at gamma 10
      else if (!(e200 < e10))
        ++not_closer;
      if (std::min(log_margin(q0), log_margin(q1)) >= 0.5) {
        ++margin_cases;
        worst_margin = std::max(worst_margin, e200);
        if (e200 >= 1e-3) ++margin_misses;
      }
    }
    d = std::to_string(not_closer) + "/100 not closer at gamma 200 (" + std::to_string(exact) +
        " exact to double precision at both); margin >= 0.5 cases " + std::to_string(margin_cases) +
        " worst error " + fmt("%.3g", worst_margin);
    return not_closer == 0 && margin_misses == 0;
  });

  criterion("Gradient coherence", [](std::string& d) {
    std::mt19937_64 rng(106);
    std::normal_distribution<double> z, xd(1.0, 0.5);
    std::uniform_int_distribution<int> act(1, 3);
    std::exponential_distribution<double> yd(1.0);
    const PolicyComponent pc(FeatureMaps::linear_numeric_action(simulation_actions(), 1));
    double worst = 0.0;
    for (double g : {-1.5, 0.5, 1.0}) {
      for (int rep = 0; rep < 100; ++rep) {
        const Vector psi = (Vector(2) << z(rng), z(rng)).finished();
        const StageRecord r{Covariate::Constant(1, xd(rng)), act(rng), yd(rng), 1.0 / 3.0};
        const std::vector<StageRecord> one{r};
        const Vector e = gamma_estimating_function(psi, r, pc, g);
        Vector fd(2);
        for (Index j = 0; j < 2; ++j) {
          auto central = [&](double h) {
            Vector up = psi, dn = psi;
            up[j] += h;
            dn[j] -= h;
            return (gamma_loss(up, one, pc, g) - gamma_loss(dn, one, pc, g)) / (2.0 * h);
          };
          const double h = 1e-3 * std::max(1.0, std::abs(psi[j]));
          fd[j] = -(4.0 * central(0.5 * h) - central(h)) / 3.0;
        }
        worst = std::max(worst, (e - fd).norm() / fd.norm());
      }
    }
    d = "max relative error " + fmt("%.3g", worst) + " (central differences with Richardson extrapolation)";
    return worst < 1e-5;
  });

  criterion("Unbiasedness at the truth", [](std::string& d) {
    ScenarioConfig cfg;
    cfg.n = 100000;
    const auto records = stage_records(generate_correct(cfg, 107), 0);
    const auto model = simulation_model();
    const Vector psi = (Vector(2) << -1.0, 2.0).finished();
    const Vector alpha = (Vector(2) << -1.0, -2.0).finished();
    bool ok = true;
    auto check = [&](const std::string& name, const std::function<Vector(const StageRecord&)>& f) {
      Vector s, ss;
      for (std::size_t i = 0; i < records.size(); ++i) {
        const Vector v = f(records[i]);
        if (i == 0) {
          s = Vector::Zero(v.size());
          ss = Vector::Zero(v.size());
        }
        s += v;
        ss += v.cwiseProduct(v);
      }
      const double n = static_cast<double>(records.size());
      const Vector mean = s / n;
      const Vector se = ((ss / n - mean.cwiseProduct(mean)) / (n - 1.0)).cwiseSqrt();
      d += name + " z =";
      for (Index j = 0; j < mean.size(); ++j) {
        const double zj = mean[j] / se[j];
        d += " " + fmt("%.2f", zj);
        if (std::abs(zj) >= 3.0) ok = false;
      }
      d += "; ";
    };
    check("gamma -1.5", [&](const StageRecord& r) { return gamma_estimating_function(psi, r, model.policy_part(), -1.5); });
    check("gamma 1", [&](const StageRecord& r) { return gamma_estimating_function(psi, r, model.policy_part(), 1.0); });
    check("ML", [&](const StageRecord& r) { return ml_estimating_function(alpha, psi, r, model); });
    return ok;
  });

  criterion("Backward induction on the two-stage scenario", [](std::string& d) {
    TwoStageScenario sc;
    const auto train = sc.generate(2000, 108);
    const auto fit = fit_backward(train, sc.templates(), FitConfig{});
    const auto test = sc.generate(1000, 109);
    bool ok = true;
    for (std::size_t t = 0; t < 2; ++t) {
      int agree = 0;
      for (std::size_t i = 0; i < test.size(); ++i) {
        const Covariate h = test.history(i, t);
        agree += fit.decide(t, h) == sc.oracle_action(t, h);
      }
      const double rate = agree / 1000.0;
      d += "stage " + std::to_string(t + 1) + " agreement " + fmt("%.3f", rate) + "; ";
      ok = ok && rate >= 0.95 && fit.stages[t].converged;
    }
    return ok;
  });

  criterion("Determinism of simulate and fit", [](std::string& d) {
    const auto dir = std::filesystem::temp_directory_path() / "powerdtr_acceptance";
    std::filesystem::create_directories(dir);
    auto path = [&](const std::string& name) { return (dir / name).string(); };
    bool ok = true;
    for (const char* tag : {"a", "b"}) {
      ok = ok && cli({"simulate", "--scenario", "misspecified", "--n", "300", "--reps", "3", "--seed", "7", "--methods",
                      "gamma,beta,ml", "--out", path(std::string("sim_") + tag), "--dump-data",
                      path(std::string("data_") + tag)}) != kExitUsage;
      ok = ok && cli({"fit", "--data", path(std::string("data_") + tag + "_rep1.csv"), "--method", "gamma", "--index",
                      "-1.5", "--out", path(std::string("fit_") + tag + ".json")}) == kExitOk;
    }
    const bool same = ok && slurp(path("sim_a.json")) == slurp(path("sim_b.json")) &&
                      slurp(path("sim_a.csv")) == slurp(path("sim_b.csv")) &&
                      slurp(path("data_a_rep1.csv")) == slurp(path("data_b_rep1.csv")) &&
                      slurp(path("fit_a.json")) == slurp(path("fit_b.json"));
    d = same ? "report, dataset and fit files byte-identical across two runs" : "outputs differ or a command failed";
    std::filesystem::remove_all(dir);
    return same;
  });

  std::printf("%d criterion(s) failed\n", failures);
  return failures == 0 ? 0 : 1;
}
