#pragma once

// File formats: tabular Q-functions, models, fit results and reports as
// JSON; trajectories as CSV with 17 significant digits.

#include <iosfwd>
#include <string>

#include <json.hpp>

#include "powerdtr/divergence.hpp"
#include "powerdtr/estimators.hpp"
#include "powerdtr/simulate.hpp"

namespace powerdtr {

using Json = nlohmann::json;

/// {"actions": [..], "points": [{"x": [..], "weight": w, "q": {"<label>": v}}]}
TabularQFunction tabular_from_json(const Json& j);
Json tabular_to_json(const TabularQFunction& q);
TabularQFunction read_tabular(const std::string& path);
void write_tabular(const TabularQFunction& q, const std::string& path);

/// {"psi0": [..], "Psi1": [[..]], "features": preset, "nuisance": {...}}
Json model_to_json(const ModelQFunction& model);
/// The preset is rebuilt on `actions` and histories of dimension `input_dim`;
/// current_covariate keeps the trailing `current_dim` entries.
ModelQFunction model_from_json(const Json& j, const ActionSet& actions, Index input_dim, Index current_dim = -1);

Json fit_result_to_json(const FitResult& r);
Json divergence_result_to_json(const DivergenceResult& r);

/// Single-stage header: x_1..x_d,a,y[,p]. Multi-stage long format adds
/// leading id,t columns with t = 1..T contiguous per id.
TrajectoryDataset parse_trajectory_csv(std::istream& in, const std::string& source = "<stream>");
TrajectoryDataset read_trajectory_csv(const std::string& path);
void write_trajectory_csv(const TrajectoryDataset& data, std::ostream& out);
void write_trajectory_csv(const TrajectoryDataset& data, const std::string& path);

Json report_to_json(const ScenarioConfig& config, const std::vector<ReplicationReport>& reports);
/// Header method,mean_psi1,mean_psi0,rmse_psi1,rmse_psi0 and one row per method.
std::string report_to_csv(const std::vector<ReplicationReport>& reports);

/// %.17g formatting, round-trips every finite double.
std::string format_double(double v);

void write_text(const std::string& path, const std::string& text);

}  // namespace powerdtr
