#pragma once

// Domain types shared by every module: action sets, tabular Q-functions,
// trajectories and deterministic policies, plus the exact value computations
// on tabular instances.

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "powerdtr/errors.hpp"

namespace powerdtr {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

/// Action labels are integers; the simulation codes treatments as 1, 2, 3.
using Action = int;

/// A covariate vector, or a flattened history (x_1, a_1, ..., x_t).
using Covariate = Eigen::VectorXd;

/// Finite ordered set of at least two distinct action labels.
class ActionSet {
 public:
  explicit ActionSet(std::vector<Action> labels);

  std::size_t size() const { return labels_.size(); }
  const std::vector<Action>& labels() const { return labels_; }
  Action operator[](std::size_t i) const { return labels_[i]; }

  bool contains(Action a) const;
  /// Position of `a` in the label list; throws StructuralError if absent.
  std::size_t index_of(Action a) const;

  bool operator==(const ActionSet& other) const { return labels_ == other.labels_; }

 private:
  std::vector<Action> labels_;
};

/// Position of the largest entry of `values` (aligned with `actions`).
/// Ties resolve to the smallest action label. Non-finite entries throw
/// EvaluationError mentioning `context` and the offending action.
std::size_t argmax_action(std::span<const double> values, const ActionSet& actions,
                          const std::string& context = {});

/// One covariate support point of a tabular Q-function.
struct GridPoint {
  Covariate x;
  double weight = 0.0;
  std::vector<double> q;  // aligned with the ActionSet order
};

/// Exact Q-function on a finite covariate grid; weights are p(x).
class TabularQFunction {
 public:
  static constexpr double kWeightTolerance = 1e-8;

  TabularQFunction(ActionSet actions, std::vector<GridPoint> points);

  const ActionSet& actions() const { return actions_; }
  std::size_t size() const { return points_.size(); }
  std::size_t num_actions() const { return actions_.size(); }
  const GridPoint& point(std::size_t i) const { return points_[i]; }
  const std::vector<GridPoint>& points() const { return points_; }

  double q(std::size_t point, std::size_t action_index) const {
    return points_[point].q[action_index];
  }

  /// Grid index whose covariate equals `x` exactly.
  std::optional<std::size_t> find(const Covariate& x) const;

  /// Same grid with q(x, .) multiplied by eta[point] > 0.
  TabularQFunction scaled(std::span<const double> eta) const;

  /// True when both share action set, covariates and weights.
  bool same_grid(const TabularQFunction& other) const;

 private:
  ActionSet actions_;
  std::vector<GridPoint> points_;
};

/// Throws StructuralError unless `q0` and `q1` share grid and actions.
void require_same_grid(const TabularQFunction& q0, const TabularQFunction& q1);

struct Stage {
  Covariate x;
  Action a = 0;
  double y = 0.0;
  std::optional<double> propensity;  // p(a | history); absent until fitted
};

struct Trajectory {
  std::string id;
  std::vector<Stage> stages;
};

/// Collection of trajectories sharing the stage count and per-stage
/// covariate dimensions.
class TrajectoryDataset {
 public:
  TrajectoryDataset() = default;
  explicit TrajectoryDataset(std::vector<Trajectory> trajectories);

  std::size_t size() const { return trajectories_.size(); }
  std::size_t num_stages() const { return num_stages_; }
  const std::vector<Trajectory>& trajectories() const { return trajectories_; }
  const Trajectory& operator[](std::size_t i) const { return trajectories_[i]; }

  /// Covariate dimension of stage t (0-based).
  Index covariate_dim(std::size_t t) const { return dims_.at(t); }

  /// Flattened history H_t = (x_1, a_1, ..., x_{t-1}, a_{t-1}, x_t); t is 0-based.
  Covariate history(std::size_t i, std::size_t t) const;
  Index history_dim(std::size_t t) const;

  bool has_propensities() const;

  /// Labels observed anywhere at stage t, sorted ascending.
  std::vector<Action> observed_actions(std::size_t t) const;

 private:
  std::vector<Trajectory> trajectories_;
  std::size_t num_stages_ = 0;
  std::vector<Index> dims_;
};

/// Deterministic map from covariate (or history) to an action of `actions`.
class Policy {
 public:
  using Rule = std::function<Action(const Covariate&)>;

  Policy(ActionSet actions, Rule rule);

  /// Applies the rule; throws StructuralError if the label is not in the set.
  Action operator()(const Covariate& x) const;
  const ActionSet& actions() const { return actions_; }

 private:
  ActionSet actions_;
  Rule rule_;
};

/// argmax_a q(x_point, a), smallest label on ties.
Action greedy_action(const TabularQFunction& q, std::size_t point);

/// Greedy action at covariate `x`, which must lie on the grid.
Action greedy_action(const TabularQFunction& q, const Covariate& x);

/// Policy defined on the grid points of `q`.
Policy greedy_policy(const TabularQFunction& q);

/// True iff q1(x, .) / q0(x, .) is constant in the action at every grid point,
/// up to relative tolerance `tol`.
bool policy_equivalent(const TabularQFunction& q0, const TabularQFunction& q1, double tol = 1e-9);

/// sum_x p(x) q(x, d(x)).
double value_expected(const TabularQFunction& q, const Policy& d);

/// Inverse probability weighted value (1/n) sum 1{A = d(X)} Y / p on stage 0.
double value_ipw(const TrajectoryDataset& data, const Policy& d);

}  // namespace powerdtr
