#include <cmath>

#include "powerdtr/estimators.hpp"

namespace powerdtr {

BackwardResult fit_backward(const TrajectoryDataset& data, const std::vector<ModelQFunction>& templates,
                            const FitConfig& config) {
  const std::size_t T = data.num_stages();
  if (T == 0) throw InvalidRecordError("empty dataset");
  if (templates.size() != T) throw StructuralError("one stage template per stage is required");

  BackwardResult out;
  out.stages.resize(T);
  out.plug_ins.resize(T);
  out.policies.reserve(T);
  for (const auto& tmpl : templates) out.policies.push_back(tmpl.policy_part());

  std::vector<double> pseudo;  // outcomes of the stage being fitted
  for (std::size_t s = T; s-- > 0;) {
    auto records = stage_records(data, s);
    if (!pseudo.empty())
      for (std::size_t i = 0; i < records.size(); ++i) records[i].y = pseudo[i];

    FitConfig cfg = config;
    cfg.seed = config.seed + s;
    FitResult policy_fit = fit(records, templates[s], cfg);
    if (!policy_fit.converged)
      out.warnings.push_back("stage " + std::to_string(s + 1) + " policy fit did not converge");
    out.policies[s] = templates[s].policy_part().with_parameters(policy_fit.psi_hat);
    out.stages[s] = std::move(policy_fit);
    if (s == 0) break;

    // Continuation value of the fitted policy under the full ML model of this stage.
    FitResult plug;
    if (config.method == Method::ml) {
      plug = out.stages[s];
    } else {
      FitConfig ml = cfg;
      ml.method = Method::ml;
      plug = fit_ml(records, templates[s], ml);
      if (!plug.converged)
        out.warnings.push_back("stage " + std::to_string(s + 1) + " plug-in ML fit did not converge");
    }
    const ModelQFunction q_hat(templates[s].nuisance().with_parameters(plug.alpha_hat),
                               templates[s].policy_part().with_parameters(plug.psi_hat));
    out.plug_ins[s] = std::move(plug);

    pseudo.assign(records.size(), 0.0);
    for (std::size_t i = 0; i < records.size(); ++i) {
      const Covariate& h = records[i].x;
      double v = data[i].stages[s - 1].y + q_hat.q(h, out.policies[s].greedy(h));
      if (v < 0.0) {
        v = 0.0;
        ++out.clamped_outcomes;
      }
      pseudo[i] = v;
    }
  }
  if (out.clamped_outcomes > 0)
    out.warnings.push_back(std::to_string(out.clamped_outcomes) + " negative pseudo-outcome(s) clamped at 0");
  return out;
}

}  // namespace powerdtr
