#include "powerdtr/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

namespace powerdtr {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw ParseError("failed writing '" + path + "'");
}

namespace {

Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path + "'");
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw ParseError("'" + path + "' is not valid JSON: " + e.what());
  }
}

Json vector_json(const Vector& v) {
  Json a = Json::array();
  for (Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

Json matrix_json(const Matrix& m) {
  Json a = Json::array();
  for (Index i = 0; i < m.rows(); ++i) a.push_back(vector_json(m.row(i).transpose()));
  return a;
}

Vector vector_from_json(const Json& j, const std::string& what) {
  if (!j.is_array()) throw ParseError(what + " must be an array of numbers");
  Vector v(static_cast<Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw ParseError(what + " must be an array of numbers");
    v[static_cast<Index>(i)] = j[i].get<double>();
  }
  return v;
}

}  // namespace

TabularQFunction tabular_from_json(const Json& j) {
  try {
    std::vector<Action> labels = j.at("actions").get<std::vector<Action>>();
    ActionSet actions(labels);
    std::vector<GridPoint> points;
    for (const auto& pj : j.at("points")) {
      GridPoint p;
      p.x = vector_from_json(pj.at("x"), "x");
      p.weight = pj.at("weight").get<double>();
      const auto& qj = pj.at("q");
      for (Action a : labels) {
        const auto key = std::to_string(a);
        if (!qj.contains(key)) throw StructuralError("grid point is missing a Q value for action " + key);
        p.q.push_back(qj.at(key).get<double>());
      }
      if (qj.size() != labels.size()) throw StructuralError("grid point carries Q values for unknown actions");
      points.push_back(std::move(p));
    }
    return TabularQFunction(std::move(actions), std::move(points));
  } catch (const Json::exception& e) {
    throw ParseError(std::string("malformed tabular Q-function: ") + e.what());
  }
}

Json tabular_to_json(const TabularQFunction& q) {
  Json j;
  j["actions"] = q.actions().labels();
  Json pts = Json::array();
  for (const auto& p : q.points()) {
    Json pj;
    pj["x"] = vector_json(p.x);
    pj["weight"] = p.weight;
    Json qj = Json::object();
    for (std::size_t a = 0; a < p.q.size(); ++a) qj[std::to_string(q.actions()[a])] = p.q[a];
    pj["q"] = qj;
    pts.push_back(pj);
  }
  j["points"] = pts;
  return j;
}

TabularQFunction read_tabular(const std::string& path) { return tabular_from_json(read_json_file(path)); }

void write_tabular(const TabularQFunction& q, const std::string& path) {
  write_text(path, tabular_to_json(q).dump(2) + "\n");
}

Json model_to_json(const ModelQFunction& model) {
  const auto& pc = model.policy_part();
  Json j;
  j["psi0"] = vector_json(pc.psi0());
  j["Psi1"] = matrix_json(pc.Psi1());
  j["features"] = pc.features().name();
  const auto& nu = model.nuisance();
  Json nj;
  switch (nu.kind()) {
    case NuisanceComponent::Kind::parametric_linear:
      nj["kind"] = "parametric_linear";
      nj["basis"] = nu.name();
      nj["alpha"] = vector_json(nu.alpha());
      break;
    case NuisanceComponent::Kind::fixed_function:
      nj["kind"] = "fixed_function";
      nj["name"] = nu.name();
      break;
    case NuisanceComponent::Kind::absent:
      nj["kind"] = "absent";
      break;
  }
  j["nuisance"] = nj;
  return j;
}

ModelQFunction model_from_json(const Json& j, const ActionSet& actions, Index input_dim, Index current_dim) {
  try {
    const auto features = FeatureMaps::preset(j.at("features").get<std::string>(), actions, input_dim, current_dim);
    const Vector psi0 = vector_from_json(j.at("psi0"), "psi0");
    const auto& rows = j.at("Psi1");
    Matrix Psi1(static_cast<Index>(rows.size()), rows.empty() ? 0 : static_cast<Index>(rows[0].size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const Vector row = vector_from_json(rows[r], "Psi1 row");
      if (row.size() != Psi1.cols()) throw ParseError("Psi1 rows differ in length");
      Psi1.row(static_cast<Index>(r)) = row.transpose();
    }
    NuisanceComponent nu = NuisanceComponent::absent();
    if (j.contains("nuisance")) {
      const auto& nj = j.at("nuisance");
      const auto kind = nj.at("kind").get<std::string>();
      if (kind == "parametric_linear") {
        const auto basis = nj.value("basis", std::string("linear"));
        if (basis != "linear") throw ParseError("unsupported nuisance basis '" + basis + "'");
        nu = NuisanceComponent::linear_with_intercept(input_dim, vector_from_json(nj.at("alpha"), "alpha"));
      } else if (kind == "fixed_function") {
        const auto name = nj.at("name").get<std::string>();
        if (name != "gaussian_bump") throw ParseError("unknown fixed nuisance '" + name + "'");
        nu = NuisanceComponent::fixed(name, [](const Covariate& x) { return -(x[0] - 1.0) * (x[0] - 1.0); });
      } else if (kind != "absent") {
        throw ParseError("unknown nuisance kind '" + kind + "'");
      }
    }
    return ModelQFunction(std::move(nu), PolicyComponent(features, psi0, Psi1));
  } catch (const Json::exception& e) {
    throw ParseError(std::string("malformed model file: ") + e.what());
  }
}

Json fit_result_to_json(const FitResult& r) {
  Json j;
  j["method"] = to_string(r.method);
  j["index"] = r.index;
  j["psi_hat"] = vector_json(r.psi_hat);
  j["alpha_hat"] = vector_json(r.alpha_hat);
  j["covariance"] = matrix_json(r.covariance);
  j["converged"] = r.converged;
  j["iterations"] = r.iterations;
  j["loss"] = r.loss;
  j["gradient_norm"] = r.gradient_norm;
  j["diagnostics"] = r.diagnostics;
  if (!r.note.empty()) j["note"] = r.note;
  return j;
}

Json divergence_result_to_json(const DivergenceResult& r) {
  Json j;
  j["family"] = to_string(r.family);
  j["index"] = r.index;
  j["value"] = r.value;
  j["lhs_entropy"] = r.lhs_entropy;
  j["diag_entropy"] = r.diag_entropy;
  if (!r.note.empty()) j["note"] = r.note;
  return j;
}

namespace {

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

[[noreturn]] void row_error(const std::string& source, std::size_t line, const std::string& what) {
  throw ParseError(source + ": row " + std::to_string(line) + ": " + what);
}

double parse_real(const std::string& s, const std::string& source, std::size_t line, const std::string& col) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || !std::isfinite(v))
    row_error(source, line, "column '" + col + "' is not a finite number ('" + s + "')");
  return v;
}

long parse_int(const std::string& s, const std::string& source, std::size_t line, const std::string& col) {
  char* end = nullptr;
  const long v = std::strtol(s.c_str(), &end, 10);
  if (s.empty() || end != s.c_str() + s.size())
    row_error(source, line, "column '" + col + "' is not an integer ('" + s + "')");
  return v;
}

}  // namespace

TrajectoryDataset parse_trajectory_csv(std::istream& in, const std::string& source) {
  std::string line;
  std::size_t lineno = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++lineno;
    if (!trim(line).empty()) {
      header = split(line);
      break;
    }
  }
  if (header.empty()) throw ParseError(source + ": missing header row");
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (!col.emplace(header[i], i).second) throw ParseError(source + ": duplicate column '" + header[i] + "'");
  }
  const bool multi = col.count("id") && col.count("t");
  if (col.count("id") != col.count("t")) throw ParseError(source + ": long format needs both 'id' and 't' columns");
  if (!col.count("a") || !col.count("y")) throw ParseError(source + ": header must contain columns 'a' and 'y'");
  std::vector<std::size_t> xcols;
  for (std::size_t d = 1; col.count("x_" + std::to_string(d)); ++d) xcols.push_back(col["x_" + std::to_string(d)]);
  if (xcols.empty()) throw ParseError(source + ": header must contain covariate columns x_1, x_2, ...");
  for (const auto& name : header) {
    const bool known = name == "id" || name == "t" || name == "a" || name == "y" || name == "p" ||
                       (name.rfind("x_", 0) == 0 &&
                        std::any_of(xcols.begin(), xcols.end(), [&](std::size_t c) { return header[c] == name; }));
    if (!known) throw ParseError(source + ": unexpected column '" + name + "'");
  }
  const bool has_p = col.count("p") > 0;

  struct Row {
    long t = 1;
    Stage stage;
    std::size_t line = 0;
  };
  std::vector<std::string> order;
  std::map<std::string, std::vector<Row>> groups;
  std::size_t count = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto cells = split(line);
    if (cells.size() != header.size())
      row_error(source, lineno, "expected " + std::to_string(header.size()) + " fields, found " + std::to_string(cells.size()));
    Row row;
    row.line = lineno;
    row.stage.x.resize(static_cast<Index>(xcols.size()));
    for (std::size_t d = 0; d < xcols.size(); ++d)
      row.stage.x[static_cast<Index>(d)] = parse_real(cells[xcols[d]], source, lineno, header[xcols[d]]);
    row.stage.a = static_cast<Action>(parse_int(cells[col["a"]], source, lineno, "a"));
    row.stage.y = parse_real(cells[col["y"]], source, lineno, "y");
    if (row.stage.y < 0.0) row_error(source, lineno, "outcome y must be nonnegative");
    if (has_p && !cells[col["p"]].empty()) {
      const double p = parse_real(cells[col["p"]], source, lineno, "p");
      if (!(p > 0.0 && p <= 1.0)) row_error(source, lineno, "propensity p must lie in (0, 1]");
      row.stage.propensity = p;
    }
    std::string id = std::to_string(++count);
    if (multi) {
      id = cells[col["id"]];
      if (id.empty()) row_error(source, lineno, "empty id");
      row.t = parse_int(cells[col["t"]], source, lineno, "t");
    }
    if (!groups.count(id)) order.push_back(id);
    groups[id].push_back(std::move(row));
  }
  if (order.empty()) throw ParseError(source + ": no data rows");

  std::vector<Trajectory> trajs;
  trajs.reserve(order.size());
  for (const auto& id : order) {
    auto& rows = groups[id];
    std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.t < b.t; });
    Trajectory traj{id, {}};
    for (std::size_t k = 0; k < rows.size(); ++k) {
      if (rows[k].t != static_cast<long>(k + 1))
        row_error(source, rows[k].line, "stages of id '" + id + "' must cover t = 1..T contiguously");
      traj.stages.push_back(std::move(rows[k].stage));
    }
    trajs.push_back(std::move(traj));
  }
  return TrajectoryDataset(std::move(trajs));
}

TrajectoryDataset read_trajectory_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path + "'");
  return parse_trajectory_csv(in, path);
}

void write_trajectory_csv(const TrajectoryDataset& data, std::ostream& out) {
  if (data.size() == 0) throw InvalidRecordError("empty dataset");
  const std::size_t T = data.num_stages();
  const Index d = data.covariate_dim(0);
  for (std::size_t t = 1; t < T; ++t)
    if (data.covariate_dim(t) != d) throw StructuralError("long CSV format needs a common covariate dimension");
  const bool with_p = data.has_propensities();
  const bool multi = T > 1;
  if (multi) out << "id,t,";
  for (Index j = 0; j < d; ++j) out << "x_" << j + 1 << ",";
  out << "a,y" << (with_p ? ",p" : "") << "\n";
  for (const auto& traj : data.trajectories()) {
    for (std::size_t t = 0; t < T; ++t) {
      const auto& s = traj.stages[t];
      if (multi) out << traj.id << "," << t + 1 << ",";
      for (Index j = 0; j < d; ++j) out << format_double(s.x[j]) << ",";
      out << s.a << "," << format_double(s.y);
      if (with_p) out << "," << format_double(*s.propensity);
      out << "\n";
    }
  }
}

void write_trajectory_csv(const TrajectoryDataset& data, const std::string& path) {
  std::ostringstream ss;
  write_trajectory_csv(data, ss);
  write_text(path, ss.str());
}

Json report_to_json(const ScenarioConfig& config, const std::vector<ReplicationReport>& reports) {
  Json j;
  j["scenario"] = to_string(config.scenario);
  j["n"] = config.n;
  j["reps"] = config.reps;
  j["gamma"] = config.gamma;
  j["beta"] = config.beta;
  j["seed"] = config.seed;
  j["covariate_sd"] = config.covariate_sd;
  j["truth"] = {{"psi1", config.psi1}, {"psi0", config.psi0}};
  Json methods = Json::array();
  for (const auto& r : reports) {
    Json m;
    m["method"] = to_string(r.method);
    m["index"] = r.index;
    m["mean_psi1"] = r.mean_psi1();
    m["mean_psi0"] = r.mean_psi0();
    m["rmse_psi1"] = r.rmse_psi1();
    m["rmse_psi0"] = r.rmse_psi0();
    m["failures"] = r.failures;
    Json est = Json::array();
    for (const auto& e : r.per_rep_estimates) est.push_back({e[1], e[0]});
    m["estimates_psi1_psi0"] = est;
    m["converged"] = r.converged;
    methods.push_back(m);
  }
  j["methods"] = methods;
  return j;
}

std::string report_to_csv(const std::vector<ReplicationReport>& reports) {
  std::ostringstream out;
  out << "method,mean_psi1,mean_psi0,rmse_psi1,rmse_psi0\n";
  for (const auto& r : reports) {
    out << to_string(r.method) << "," << format_double(r.mean_psi1()) << "," << format_double(r.mean_psi0()) << ","
        << format_double(r.rmse_psi1()) << "," << format_double(r.rmse_psi0()) << "\n";
  }
  return out.str();
}

}  // namespace powerdtr
