#pragma once

// Multiplicative Q-models Q(x, a) = exp{f(x) + g(x, a, psi)} with a linear
// policy component g = psi0' s0(a) + s1(a)' Psi1 t(x).

#include <functional>
#include <string>
#include <vector>

#include "powerdtr/qcore.hpp"

namespace powerdtr {

/// Feature maps s0(a), s1(a) and t(x) with fixed output dimensions.
class FeatureMaps {
 public:
  using ActionMap = std::function<Vector(Action)>;
  using CovariateMap = std::function<Vector(const Covariate&)>;

  FeatureMaps(std::string name, ActionSet actions, Index input_dim, ActionMap s0, ActionMap s1, CovariateMap t);

  /// Named presets:
  ///   linear_numeric_action  s0(a) = s1(a) = a, t(x) = x
  ///   current_covariate      s0(a) = s1(a) = a, t(h) = trailing `current_dim` entries of h
  ///   one_hot_action         s0(a) = s1(a) = indicator of a, first action dropped, t(x) = x
  static FeatureMaps preset(const std::string& name, const ActionSet& actions, Index input_dim,
                            Index current_dim = -1);
  static FeatureMaps linear_numeric_action(const ActionSet& actions, Index input_dim);

  const std::string& name() const { return name_; }
  const ActionSet& actions() const { return actions_; }
  Index input_dim() const { return input_dim_; }
  Index s0_dim() const { return d0_; }
  Index s1_dim() const { return d1_; }
  Index t_dim() const { return dt_; }

  Vector s0(Action a) const;
  Vector s1(Action a) const;
  Vector t(const Covariate& x) const;

  /// Action averages of s0 and s1.
  Vector s0_bar() const;
  Vector s1_bar() const;

 private:
  std::string name_;
  ActionSet actions_;
  Index input_dim_;
  ActionMap s0_, s1_;
  CovariateMap t_;
  Index d0_ = 0, d1_ = 0, dt_ = 0;
};

/// g(x, a, psi) for the linear interaction model. Parameters are packed as
/// psi = [psi0; vec(Psi1)] with Psi1 flattened row by row.
class PolicyComponent {
 public:
  explicit PolicyComponent(FeatureMaps features);
  PolicyComponent(FeatureMaps features, Vector psi0, Matrix Psi1);

  const FeatureMaps& features() const { return features_; }
  const ActionSet& actions() const { return features_.actions(); }
  const Vector& psi0() const { return psi0_; }
  const Matrix& Psi1() const { return Psi1_; }

  Index num_parameters() const { return psi0_.size() + Psi1_.size(); }
  Vector parameters() const;
  PolicyComponent with_parameters(const Vector& psi) const;

  double g(const Covariate& x, Action a) const;
  /// dg/dpsi; does not depend on psi.
  Vector gradient(const Covariate& x, Action a) const;
  /// m x p matrix whose rows are gradient(x, a) in action order.
  Matrix gradient_rows(const Covariate& x) const;

  /// argmax_a g(x, a), smallest label on ties.
  Action greedy(const Covariate& x) const;
  Policy policy() const;

 private:
  void check_input(const Covariate& x) const;

  FeatureMaps features_;
  Vector psi0_;
  Matrix Psi1_;
};

double eval_g(const PolicyComponent& pc, const Covariate& x, Action a);
Vector eval_g_gradient(const PolicyComponent& pc, const Covariate& x, Action a);

/// The action-free component f(x).
class NuisanceComponent {
 public:
  enum class Kind { parametric_linear, fixed_function, absent };
  using Basis = std::function<Vector(const Covariate&)>;
  using Function = std::function<double(const Covariate&)>;

  /// f = alpha' basis(x).
  static NuisanceComponent parametric(std::string basis_name, Index basis_dim, Basis basis, Vector alpha = {});
  /// basis(x) = [x; 1], so that a scalar covariate gives f = alpha1 x + alpha0.
  static NuisanceComponent linear_with_intercept(Index input_dim, Vector alpha = {});
  static NuisanceComponent fixed(std::string name, Function f);
  static NuisanceComponent absent();

  Kind kind() const { return kind_; }
  const std::string& name() const { return name_; }
  const Vector& alpha() const { return alpha_; }
  Index num_parameters() const { return kind_ == Kind::parametric_linear ? basis_dim_ : 0; }
  NuisanceComponent with_parameters(const Vector& alpha) const;

  double f(const Covariate& x) const;
  /// basis(x) for the parametric kind; empty otherwise.
  Vector basis(const Covariate& x) const;

 private:
  Kind kind_ = Kind::absent;
  std::string name_ = "absent";
  Index basis_dim_ = 0;
  Basis basis_;
  Function fixed_;
  Vector alpha_;
};

class ModelQFunction {
 public:
  ModelQFunction(NuisanceComponent nuisance, PolicyComponent policy);

  const NuisanceComponent& nuisance() const { return nuisance_; }
  const PolicyComponent& policy_part() const { return policy_; }
  const ActionSet& actions() const { return policy_.actions(); }

  double log_q(const Covariate& x, Action a) const;
  /// exp{f + g}; EvaluationError on overflow.
  double q(const Covariate& x, Action a) const;
  Action greedy(const Covariate& x) const { return policy_.greedy(x); }

 private:
  NuisanceComponent nuisance_;
  PolicyComponent policy_;
};

struct WeightedPoint {
  Covariate x;
  double weight = 0.0;
};

TabularQFunction to_tabular(const ModelQFunction& model, const std::vector<WeightedPoint>& grid);

}  // namespace powerdtr
