#include "powerdtr/qcore.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>

namespace powerdtr {

ActionSet::ActionSet(std::vector<Action> labels) : labels_(std::move(labels)) {
  if (labels_.size() < 2) throw StructuralError("an action set needs at least two actions");
  std::set<Action> seen(labels_.begin(), labels_.end());
  if (seen.size() != labels_.size()) throw StructuralError("action labels must be distinct");
}

bool ActionSet::contains(Action a) const {
  return std::find(labels_.begin(), labels_.end(), a) != labels_.end();
}

std::size_t ActionSet::index_of(Action a) const {
  auto it = std::find(labels_.begin(), labels_.end(), a);
  if (it == labels_.end()) throw StructuralError("action " + std::to_string(a) + " is not in the action set");
  return static_cast<std::size_t>(it - labels_.begin());
}

std::size_t argmax_action(std::span<const double> values, const ActionSet& actions,
                          const std::string& context) {
  if (values.size() != actions.size()) throw StructuralError("value count does not match the action set");
  std::size_t best = 0;
  for (std::size_t j = 0; j < values.size(); ++j) {
    if (!std::isfinite(values[j])) {
      std::ostringstream msg;
      msg << "non-finite Q value at action " << actions[j];
      if (!context.empty()) msg << " (" << context << ")";
      throw EvaluationError(msg.str());
    }
    if (j == 0) continue;
    if (values[j] > values[best] || (values[j] == values[best] && actions[j] < actions[best])) best = j;
  }
  return best;
}

namespace {

std::string describe(const Covariate& x) {
  std::ostringstream out;
  out << "x=(";
  for (Index i = 0; i < x.size(); ++i) out << (i ? ", " : "") << x[i];
  out << ")";
  return out.str();
}

}  // namespace

TabularQFunction::TabularQFunction(ActionSet actions, std::vector<GridPoint> points)
    : actions_(std::move(actions)), points_(std::move(points)) {
  if (points_.empty()) throw StructuralError("a tabular Q-function needs at least one grid point");
  const Index dim = points_.front().x.size();
  if (dim < 1) throw StructuralError("covariates must have dimension >= 1");
  double total = 0.0;
  for (const auto& p : points_) {
    if (p.x.size() != dim) throw StructuralError("grid covariates differ in dimension");
    if (!p.x.allFinite()) throw StructuralError("non-finite covariate at " + describe(p.x));
    if (!(p.weight >= 0.0) || !std::isfinite(p.weight))
      throw StructuralError("grid weights must be finite and nonnegative");
    if (p.q.size() != actions_.size())
      throw StructuralError("grid point " + describe(p.x) + " does not carry a Q value for every action");
    for (std::size_t j = 0; j < p.q.size(); ++j) {
      if (!(p.q[j] > 0.0) || !std::isfinite(p.q[j])) {
        std::ostringstream msg;
        msg << "Q value at " << describe(p.x) << ", action " << actions_[j]
            << " must be finite and strictly positive, got " << p.q[j];
        throw StructuralError(msg.str());
      }
    }
    total += p.weight;
  }
  if (std::abs(total - 1.0) > kWeightTolerance) {
    std::ostringstream msg;
    msg << "grid weights sum to " << total << ", expected 1";
    throw StructuralError(msg.str());
  }
}

std::optional<std::size_t> TabularQFunction::find(const Covariate& x) const {
  for (std::size_t i = 0; i < points_.size(); ++i) {
    if (points_[i].x.size() == x.size() && points_[i].x == x) return i;
  }
  return std::nullopt;
}

TabularQFunction TabularQFunction::scaled(std::span<const double> eta) const {
  if (eta.size() != points_.size()) throw StructuralError("one scaling factor per grid point is required");
  auto pts = points_;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (!(eta[i] > 0.0)) throw StructuralError("scaling factors must be strictly positive");
    for (double& v : pts[i].q) v *= eta[i];
  }
  return TabularQFunction(actions_, std::move(pts));
}

bool TabularQFunction::same_grid(const TabularQFunction& other) const {
  if (!(actions_ == other.actions_) || points_.size() != other.points_.size()) return false;
  for (std::size_t i = 0; i < points_.size(); ++i) {
    const auto& a = points_[i];
    const auto& b = other.points_[i];
    if (a.x.size() != b.x.size() || a.x != b.x || a.weight != b.weight) return false;
  }
  return true;
}

void require_same_grid(const TabularQFunction& q0, const TabularQFunction& q1) {
  if (!q0.same_grid(q1)) throw StructuralError("Q-functions are defined on different grids or action sets");
}

TrajectoryDataset::TrajectoryDataset(std::vector<Trajectory> trajectories)
    : trajectories_(std::move(trajectories)) {
  if (trajectories_.empty()) return;
  num_stages_ = trajectories_.front().stages.size();
  if (num_stages_ < 1) throw InvalidRecordError("trajectories need at least one stage");
  for (const auto& s : trajectories_.front().stages) dims_.push_back(s.x.size());
  for (const auto& traj : trajectories_) {
    if (traj.stages.size() != num_stages_)
      throw InvalidRecordError("trajectory '" + traj.id + "' has a different stage count");
    for (std::size_t t = 0; t < num_stages_; ++t) {
      const auto& s = traj.stages[t];
      if (s.x.size() != dims_[t] || s.x.size() < 1)
        throw InvalidRecordError("trajectory '" + traj.id + "' has a covariate of the wrong dimension");
      if (!s.x.allFinite()) throw InvalidRecordError("trajectory '" + traj.id + "' has a non-finite covariate");
      if (!(s.y >= 0.0) || !std::isfinite(s.y))
        throw InvalidRecordError("trajectory '" + traj.id + "' has a negative or non-finite outcome");
      if (s.propensity && !(*s.propensity > 0.0 && *s.propensity <= 1.0))
        throw InvalidRecordError("trajectory '" + traj.id + "' has a propensity outside (0, 1]");
    }
  }
}

Index TrajectoryDataset::history_dim(std::size_t t) const {
  Index d = 0;
  for (std::size_t s = 0; s < t; ++s) d += dims_.at(s) + 1;
  return d + dims_.at(t);
}

Covariate TrajectoryDataset::history(std::size_t i, std::size_t t) const {
  const auto& stages = trajectories_.at(i).stages;
  Covariate h(history_dim(t));
  Index k = 0;
  for (std::size_t s = 0; s < t; ++s) {
    h.segment(k, stages[s].x.size()) = stages[s].x;
    k += stages[s].x.size();
    h[k++] = stages[s].a;
  }
  h.segment(k, stages[t].x.size()) = stages[t].x;
  return h;
}

bool TrajectoryDataset::has_propensities() const {
  for (const auto& traj : trajectories_)
    for (const auto& s : traj.stages)
      if (!s.propensity) return false;
  return true;
}

std::vector<Action> TrajectoryDataset::observed_actions(std::size_t t) const {
  std::set<Action> seen;
  for (const auto& traj : trajectories_) seen.insert(traj.stages.at(t).a);
  return {seen.begin(), seen.end()};
}

Policy::Policy(ActionSet actions, Rule rule) : actions_(std::move(actions)), rule_(std::move(rule)) {}

Action Policy::operator()(const Covariate& x) const {
  const Action a = rule_(x);
  if (!actions_.contains(a)) throw StructuralError("policy returned action " + std::to_string(a) + " outside its action set");
  return a;
}

Action greedy_action(const TabularQFunction& q, std::size_t point) {
  const auto& p = q.point(point);
  return q.actions()[argmax_action(p.q, q.actions(), describe(p.x))];
}

Action greedy_action(const TabularQFunction& q, const Covariate& x) {
  auto idx = q.find(x);
  if (!idx) throw StructuralError("covariate " + describe(x) + " is not on the grid");
  return greedy_action(q, *idx);
}

Policy greedy_policy(const TabularQFunction& q) {
  return Policy(q.actions(), [q](const Covariate& x) { return greedy_action(q, x); });
}

bool policy_equivalent(const TabularQFunction& q0, const TabularQFunction& q1, double tol) {
  require_same_grid(q0, q1);
  for (std::size_t i = 0; i < q0.size(); ++i) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = 0.0;
    for (std::size_t j = 0; j < q0.num_actions(); ++j) {
      const double r = q1.q(i, j) / q0.q(i, j);
      lo = std::min(lo, r);
      hi = std::max(hi, r);
    }
    if (hi - lo > tol * hi) return false;
  }
  return true;
}

double value_expected(const TabularQFunction& q, const Policy& d) {
  double v = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    const auto& p = q.point(i);
    v += p.weight * p.q[q.actions().index_of(d(p.x))];
  }
  return v;
}

double value_ipw(const TrajectoryDataset& data, const Policy& d) {
  if (data.size() == 0) throw InvalidRecordError("empty dataset");
  double total = 0.0;
  for (const auto& traj : data.trajectories()) {
    const auto& s = traj.stages.front();
    if (!s.propensity || !(*s.propensity > 0.0))
      throw InvalidRecordError("record '" + traj.id + "' has no positive propensity");
    if (d(s.x) == s.a) total += s.y / *s.propensity;
  }
  return total / static_cast<double>(data.size());
}

}  // namespace powerdtr
