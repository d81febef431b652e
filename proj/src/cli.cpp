#include "powerdtr/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <ostream>
#include <set>
#include <sstream>

#include "powerdtr/io.hpp"

namespace powerdtr {

namespace {

struct SimulateArgs {
  std::string scenario = "correct";
  std::size_t n = 500;
  std::size_t reps = 300;
  double gamma = -1.5;
  double beta = -1.5;
  std::uint64_t seed = 0;
  std::string out;
  double covariate_sd = 0.5;
  std::string methods = "gamma,beta";
  std::string dump_data;
};

struct FitArgs {
  std::string data;
  std::string method = "gamma";
  double index = -1.5;
  std::string features = "linear_numeric_action";
  std::string out;
  bool fit_propensity = false;
  std::string model_out;
  int restarts = 5;
  std::uint64_t seed = 0;
};

struct DivergenceArgs {
  std::string q0, q1;
  std::string family = "gamma";
  double index = 1.0;
  std::string limit_check;
};

std::vector<Method> parse_methods(const std::string& list) {
  std::vector<Method> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const Method m = method_from_string(item);
    if (std::find(out.begin(), out.end(), m) == out.end()) out.push_back(m);
  }
  if (out.empty()) throw StructuralError("--methods selects no method");
  return out;
}

int cmd_simulate(const SimulateArgs& a, std::ostream& out, std::ostream& err) {
  ScenarioConfig config;
  config.scenario = scenario_from_string(a.scenario);
  config.n = a.n;
  config.reps = a.reps;
  config.gamma = a.gamma;
  config.beta = a.beta;
  config.seed = a.seed;
  config.covariate_sd = a.covariate_sd;
  config.methods = parse_methods(a.methods);
  if (config.n == 0 || config.reps == 0) throw StructuralError("--n and --reps must be positive");
  if (!(config.covariate_sd > 0.0)) throw StructuralError("--covariate-sd must be positive");

  if (!a.dump_data.empty()) {
    for (std::size_t r = 0; r < config.reps; ++r)
      write_trajectory_csv(generate(config, config.seed + r), a.dump_data + "_rep" + std::to_string(r + 1) + ".csv");
  }

  auto emit = [&](const std::vector<ReplicationReport>& reports) {
    write_text(a.out + ".json", report_to_json(config, reports).dump(2) + "\n");
    const std::string csv = report_to_csv(reports);
    write_text(a.out + ".csv", csv);
    out << csv;
    for (const auto& r : reports)
      if (r.failures) err << to_string(r.method) << ": " << r.failures << " of " << config.reps << " fits did not converge\n";
  };
  try {
    emit(run_replications(config));
  } catch (const HarnessError& e) {
    emit(e.reports());
    err << "harness error: " << e.what() << "\n";
    return kExitInternal;
  }
  return kExitOk;
}

ActionSet dataset_actions(const TrajectoryDataset& data) {
  std::set<Action> labels;
  for (std::size_t t = 0; t < data.num_stages(); ++t)
    for (Action a : data.observed_actions(t)) labels.insert(a);
  if (labels.size() < 2) throw DegenerateError("the data contain fewer than two distinct actions");
  return ActionSet({labels.begin(), labels.end()});
}

ModelQFunction stage_template(const TrajectoryDataset& data, std::size_t t, const ActionSet& actions,
                              const std::string& features) {
  const Index dim = data.history_dim(t);
  return ModelQFunction(NuisanceComponent::linear_with_intercept(dim),
                        PolicyComponent(FeatureMaps::preset(features, actions, dim, data.covariate_dim(t))));
}

int cmd_fit(const FitArgs& a, std::ostream& out, std::ostream& err) {
  TrajectoryDataset data = read_trajectory_csv(a.data);
  if (!data.has_propensities()) {
    if (!a.fit_propensity)
      throw InvalidRecordError("'" + a.data +
                               "' has no (complete) propensity column p; add it or rerun with --fit-propensity "
                               "to estimate propensities by multinomial logistic regression");
    std::vector<std::string> warnings;
    data = with_fitted_propensities(data, &warnings);
    for (const auto& w : warnings) err << "warning: " << w << "\n";
  }
  const ActionSet actions = dataset_actions(data);

  FitConfig config;
  config.method = method_from_string(a.method);
  config.index = a.index;
  config.restarts = a.restarts;
  config.seed = a.seed;

  Json result;
  result["actions"] = actions.labels();
  result["features"] = a.features;
  if (data.num_stages() == 1) {
    const ModelQFunction tmpl = stage_template(data, 0, actions, a.features);
    const FitResult r = fit(stage_records(data, 0), tmpl, config);
    Json fj = fit_result_to_json(r);
    fj["actions"] = result["actions"];
    fj["features"] = a.features;
    result = fj;
    for (const auto& d : r.diagnostics) err << "warning: " << d << "\n";
    if (!a.model_out.empty()) {
      NuisanceComponent nu = r.alpha_hat.size() ? tmpl.nuisance().with_parameters(r.alpha_hat) : NuisanceComponent::absent();
      const ModelQFunction fitted(nu, tmpl.policy_part().with_parameters(r.psi_hat));
      write_text(a.model_out, model_to_json(fitted).dump(2) + "\n");
    }
  } else {
    std::vector<ModelQFunction> templates;
    for (std::size_t t = 0; t < data.num_stages(); ++t) templates.push_back(stage_template(data, t, actions, a.features));
    const BackwardResult br = fit_backward(data, templates, config);
    Json stages = Json::array();
    for (std::size_t t = 0; t < br.stages.size(); ++t) {
      Json sj = fit_result_to_json(br.stages[t]);
      sj["stage"] = t + 1;
      stages.push_back(sj);
    }
    result["stages"] = stages;
    result["clamped_pseudo_outcomes"] = br.clamped_outcomes;
    result["warnings"] = br.warnings;
    for (const auto& w : br.warnings) err << "warning: " << w << "\n";
    if (!a.model_out.empty()) {
      Json models = Json::array();
      for (const auto& pc : br.policies) models.push_back(model_to_json(ModelQFunction(NuisanceComponent::absent(), pc)));
      write_text(a.model_out, models.dump(2) + "\n");
    }
  }
  write_text(a.out, result.dump(2) + "\n");
  out << "wrote " << a.out << "\n";
  return kExitOk;
}

int cmd_divergence(const DivergenceArgs& a, std::ostream& out) {
  const TabularQFunction q0 = read_tabular(a.q0);
  const TabularQFunction q1 = read_tabular(a.q1);
  require_same_grid(q0, q1);
  const DivergenceSpec spec{family_from_string(a.family), a.index};
  Json j = divergence_result_to_json(evaluate_divergence(spec, q0, q1));
  if (a.limit_check == "hm") {
    const auto h = harmonic_identity_check(q0);
    j["limit_check"] = {{"kind", "hm"}, {"lhs", h.lhs}, {"rhs", h.rhs}};
  } else if (a.limit_check == "gm") {
    const double gamma = -1.0 + 1e-3;
    const double m = static_cast<double>(q0.num_actions());
    const double scaled = gamma_divergence_scaled(q0, q1, gamma, -std::log(m) / (1.0 + gamma));
    j["limit_check"] = {{"kind", "gm"}, {"gamma", gamma}, {"lhs", scaled}, {"rhs", gm_limit_divergence(q0, q1)}};
  } else if (a.limit_check == "value_gap") {
    Json pts = Json::array();
    for (const auto& p : value_gap_limit(q0, q1, {10.0, 50.0, 200.0}))
      pts.push_back({{"gamma", p.gamma}, {"lhs", p.scaled_divergence}, {"rhs", p.value_gap}});
    j["limit_check"] = {{"kind", "value_gap"}, {"points", pts}};
  }
  out << j.dump(2) << "\n";
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Minimum power-divergence estimation of treatment policies", "powerdtr"};
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "Run the Monte Carlo replication harness");
  simulate->add_option("--scenario", sim.scenario, "correct | misspecified")
      ->check(CLI::IsMember({"correct", "misspecified"}))
      ->capture_default_str();
  simulate->add_option("--n", sim.n, "Sample size per replication")->capture_default_str();
  simulate->add_option("--reps", sim.reps, "Number of replications")->capture_default_str();
  simulate->add_option("--gamma", sim.gamma, "gamma-power index")->capture_default_str();
  simulate->add_option("--beta", sim.beta, "beta-power index")->capture_default_str();
  simulate->add_option("--seed", sim.seed, "Master seed")->capture_default_str();
  simulate->add_option("--out", sim.out, "Output prefix for .json and .csv")->required();
  simulate->add_option("--covariate-sd", sim.covariate_sd, "Standard deviation of X")->capture_default_str();
  simulate->add_option("--methods", sim.methods, "Comma list of gamma, beta, ml")->capture_default_str();
  simulate->add_option("--dump-data", sim.dump_data, "Write each replication dataset to PREFIX_repK.csv");

  FitArgs fa;
  auto* fitcmd = app.add_subcommand("fit", "Fit a policy model to a trajectory CSV");
  fitcmd->add_option("--data", fa.data, "Trajectory CSV")->required();
  fitcmd->add_option("--method", fa.method, "gamma | beta | ml")
      ->check(CLI::IsMember({"gamma", "beta", "ml"}))
      ->capture_default_str();
  fitcmd->add_option("--index", fa.index, "gamma or beta power index")->capture_default_str();
  fitcmd->add_option("--features", fa.features, "linear_numeric_action | current_covariate | one_hot_action")
      ->check(CLI::IsMember({"linear_numeric_action", "current_covariate", "one_hot_action"}))
      ->capture_default_str();
  fitcmd->add_option("--out", fa.out, "FitResult JSON path")->required();
  fitcmd->add_flag("--fit-propensity", fa.fit_propensity, "Estimate missing propensities");
  fitcmd->add_option("--model-out", fa.model_out, "Also write the fitted model JSON");
  fitcmd->add_option("--restarts", fa.restarts, "Random restarts")->capture_default_str()->check(CLI::NonNegativeNumber);
  fitcmd->add_option("--seed", fa.seed, "Restart seed")->capture_default_str();

  DivergenceArgs da;
  auto* div = app.add_subcommand("divergence", "Evaluate a divergence between two tabular Q-functions");
  div->add_option("--q0", da.q0, "First tabular Q JSON")->required();
  div->add_option("--q1", da.q1, "Second tabular Q JSON")->required();
  div->add_option("--family", da.family, "gamma | beta | ekl | nkl")
      ->check(CLI::IsMember({"gamma", "beta", "ekl", "nkl"}))
      ->capture_default_str();
  div->add_option("--index", da.index, "Power index")->capture_default_str();
  div->add_option("--limit-check", da.limit_check, "value_gap | gm | hm")->check(CLI::IsMember({"value_gap", "gm", "hm"}));

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    if (simulate->parsed()) return cmd_simulate(sim, out, err);
    if (fitcmd->parsed()) return cmd_fit(fa, out, err);
    if (div->parsed()) return cmd_divergence(da, out);
  } catch (const HarnessError& e) {
    err << "harness error: " << e.what() << "\n";
    return kExitInternal;
  } catch (const ConsistencyError& e) {
    err << "internal error: " << e.what() << "\n";
    return kExitInternal;
  } catch (const EvaluationError& e) {
    err << "evaluation error: " << e.what() << "\n";
    return kExitInternal;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return kExitInternal;
  }
  return kExitUsage;
}

}  // namespace powerdtr
