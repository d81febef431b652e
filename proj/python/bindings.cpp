#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <algorithm>
#include <set>

#include "powerdtr/divergence.hpp"
#include "powerdtr/estimators.hpp"
#include "powerdtr/simulate.hpp"

namespace py = pybind11;
using namespace powerdtr;

namespace {

TabularQFunction make_tabular(const std::vector<Action>& actions, const Matrix& x, const Matrix& q,
                              std::optional<std::vector<double>> weights) {
  if (x.rows() != q.rows()) throw StructuralError("x and q need one row per grid point");
  const auto k = static_cast<std::size_t>(q.rows());
  std::vector<double> w = weights.value_or(std::vector<double>(k, 1.0 / static_cast<double>(k)));
  if (w.size() != k) throw StructuralError("one weight per grid point is required");
  std::vector<GridPoint> pts;
  for (std::size_t i = 0; i < k; ++i) {
    const auto r = static_cast<Index>(i);
    std::vector<double> row(q.cols());
    for (Index a = 0; a < q.cols(); ++a) row[a] = q(r, a);
    pts.push_back({x.row(r).transpose(), w[i], std::move(row)});
  }
  return TabularQFunction(ActionSet(actions), std::move(pts));
}

py::dict fit_to_dict(const FitResult& r) {
  py::dict d;
  d["method"] = to_string(r.method);
  d["index"] = r.index;
  d["psi"] = r.psi_hat;
  d["alpha"] = r.alpha_hat;
  d["covariance"] = r.covariance;
  d["loss"] = r.loss;
  d["converged"] = r.converged;
  d["iterations"] = r.iterations;
  d["diagnostics"] = r.diagnostics;
  d["note"] = r.note;
  return d;
}

py::dict report_to_dict(const ReplicationReport& r) {
  py::dict d;
  d["method"] = to_string(r.method);
  d["index"] = r.index;
  d["mean"] = std::vector<double>{r.mean_psi1(), r.mean_psi0()};
  d["rmse"] = std::vector<double>{r.rmse_psi1(), r.rmse_psi0()};
  d["failures"] = r.failures;
  d["reps"] = r.per_rep_estimates.size();
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Power divergences on Q-functions and minimum-divergence policy estimators";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<StructuralError>(m, "StructuralError", base.ptr());
  py::register_exception<EvaluationError>(m, "EvaluationError", base.ptr());
  py::register_exception<InvalidRecordError>(m, "InvalidRecordError", base.ptr());
  py::register_exception<SingularIndexError>(m, "SingularIndexError", base.ptr());
  py::register_exception<DegenerateError>(m, "DegenerateError", base.ptr());
  py::register_exception<ConsistencyError>(m, "ConsistencyError", base.ptr());
  py::register_exception<HarnessError>(m, "HarnessError", base.ptr());

  py::class_<TabularQFunction>(m, "TabularQ")
      .def(py::init(&make_tabular), py::arg("actions"), py::arg("x"), py::arg("q"), py::arg("weights") = py::none())
      .def_property_readonly("num_actions", &TabularQFunction::num_actions)
      .def("__len__", &TabularQFunction::size)
      .def("scaled", [](const TabularQFunction& q, const std::vector<double>& eta) { return q.scaled(eta); })
      .def("greedy", [](const TabularQFunction& q) {
        std::vector<Action> out;
        for (std::size_t i = 0; i < q.size(); ++i) out.push_back(greedy_action(q, i));
        return out;
      });

  m.def("gamma_divergence", &gamma_divergence, py::arg("q0"), py::arg("q1"), py::arg("gamma"));
  m.def("beta_divergence", &beta_divergence, py::arg("q0"), py::arg("q1"), py::arg("beta"));
  m.def("nkl_divergence", &nkl_divergence);
  m.def("gm_limit_divergence", &gm_limit_divergence);
  m.def("ekl_divergence", &ekl_divergence);
  m.def("policy_equivalent", &policy_equivalent, py::arg("q0"), py::arg("q1"), py::arg("tol") = 1e-9);

  m.def(
      "fit",
      [](const Matrix& x, const std::vector<Action>& a, const std::vector<double>& y, const std::vector<double>& p,
         const std::string& method, double index, const std::string& features, std::optional<std::vector<Action>> actions,
         int restarts, std::uint64_t seed, bool covariance) {
        const auto n = static_cast<std::size_t>(x.rows());
        if (a.size() != n || y.size() != n || p.size() != n)
          throw StructuralError("x, a, y and p must have the same number of records");
        std::vector<Action> labels = actions.value_or(std::vector<Action>{});
        if (labels.empty()) {
          std::set<Action> seen(a.begin(), a.end());
          labels.assign(seen.begin(), seen.end());
        }
        const ActionSet set(labels);
        std::vector<StageRecord> records;
        records.reserve(n);
        for (std::size_t i = 0; i < n; ++i) records.push_back({x.row(static_cast<Index>(i)).transpose(), a[i], y[i], p[i]});
        const ModelQFunction model(NuisanceComponent::linear_with_intercept(x.cols()),
                                   PolicyComponent(FeatureMaps::preset(features, set, x.cols())));
        FitConfig cfg;
        cfg.method = method_from_string(method);
        cfg.index = index;
        cfg.restarts = restarts;
        cfg.seed = seed;
        cfg.compute_covariance = covariance;
        FitResult r;
        {
          py::gil_scoped_release release;
          r = fit(records, model, cfg);
        }
        return fit_to_dict(r);
      },
      py::arg("x"), py::arg("a"), py::arg("y"), py::arg("p"), py::arg("method") = "gamma", py::arg("index") = -1.5,
      py::arg("features") = "linear_numeric_action", py::arg("actions") = py::none(), py::arg("restarts") = 5,
      py::arg("seed") = 0, py::arg("covariance") = true);

  m.def(
      "simulate",
      [](const std::string& scenario, std::size_t n, std::size_t reps, std::uint64_t seed, double gamma, double beta,
         const std::vector<std::string>& methods) {
        ScenarioConfig cfg;
        cfg.scenario = scenario_from_string(scenario);
        cfg.n = n;
        cfg.reps = reps;
        cfg.seed = seed;
        cfg.gamma = gamma;
        cfg.beta = beta;
        cfg.methods.clear();
        for (const auto& name : methods) cfg.methods.push_back(method_from_string(name));
        std::vector<ReplicationReport> reports;
        {
          py::gil_scoped_release release;
          reports = run_replications(cfg);
        }
        py::list out;
        for (const auto& r : reports) out.append(report_to_dict(r));
        return out;
      },
      py::arg("scenario") = "correct", py::arg("n") = 500, py::arg("reps") = 300, py::arg("seed") = 0,
      py::arg("gamma") = -1.5, py::arg("beta") = -1.5, py::arg("methods") = std::vector<std::string>{"gamma", "beta"});

  m.def(
      "generate",
      [](const std::string& scenario, std::size_t n, std::uint64_t seed) {
        ScenarioConfig cfg;
        cfg.scenario = scenario_from_string(scenario);
        cfg.n = n;
        const auto records = stage_records(generate(cfg, seed), 0);
        Vector x(n), y(n), p(n);
        std::vector<Action> a(n);
        for (std::size_t i = 0; i < n; ++i) {
          const auto r = static_cast<Index>(i);
          x[r] = records[i].x[0];
          a[i] = records[i].a;
          y[r] = records[i].y;
          p[r] = records[i].p;
        }
        return py::make_tuple(x, a, y, p);
      },
      py::arg("scenario") = "correct", py::arg("n") = 500, py::arg("seed") = 0);

#ifdef VERSION_INFO
#define POWERDTR_STR(x) #x
#define POWERDTR_XSTR(x) POWERDTR_STR(x)
  m.attr("__version__") = POWERDTR_XSTR(VERSION_INFO);
#else
  m.attr("__version__") = "dev";
#endif
}
