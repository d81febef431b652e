#include "powerdtr/models.hpp"

#include <cmath>
#include <sstream>

namespace powerdtr {

FeatureMaps::FeatureMaps(std::string name, ActionSet actions, Index input_dim, ActionMap s0, ActionMap s1,
                         CovariateMap t)
    : name_(std::move(name)),
      actions_(std::move(actions)),
      input_dim_(input_dim),
      s0_(std::move(s0)),
      s1_(std::move(s1)),
      t_(std::move(t)) {
  if (input_dim_ < 1) throw StructuralError("feature maps need an input dimension >= 1");
  const Action a0 = actions_[0];
  d0_ = s0_(a0).size();
  d1_ = s1_(a0).size();
  dt_ = t_(Covariate::Zero(input_dim_)).size();
  if (d0_ + d1_ * dt_ == 0) throw StructuralError("feature maps '" + name_ + "' produce no parameters");
}

FeatureMaps FeatureMaps::linear_numeric_action(const ActionSet& actions, Index input_dim) {
  return preset("linear_numeric_action", actions, input_dim);
}

FeatureMaps FeatureMaps::preset(const std::string& name, const ActionSet& actions, Index input_dim,
                                Index current_dim) {
  auto numeric = [](Action a) { return Vector::Constant(1, static_cast<double>(a)); };
  auto whole = [](const Covariate& x) { return Vector(x); };
  if (name == "linear_numeric_action") return FeatureMaps(name, actions, input_dim, numeric, numeric, whole);
  if (name == "current_covariate") {
    const Index k = current_dim < 0 ? input_dim : current_dim;
    if (k < 1 || k > input_dim) throw StructuralError("current_covariate needs 1 <= current_dim <= input_dim");
    return FeatureMaps(name, actions, input_dim, numeric, numeric,
                       [k](const Covariate& x) { return Vector(x.tail(k)); });
  }
  if (name == "one_hot_action") {
    auto onehot = [actions](Action a) {
      Vector v = Vector::Zero(static_cast<Index>(actions.size()) - 1);
      const auto j = actions.index_of(a);
      if (j > 0) v[static_cast<Index>(j) - 1] = 1.0;
      return v;
    };
    return FeatureMaps(name, actions, input_dim, onehot, onehot, whole);
  }
  throw StructuralError("unknown feature preset '" + name +
                        "' (expected linear_numeric_action, current_covariate or one_hot_action)");
}

Vector FeatureMaps::s0(Action a) const {
  Vector v = s0_(a);
  if (v.size() != d0_ || !v.allFinite()) throw EvaluationError("s0 feature invalid at action " + std::to_string(a));
  return v;
}

Vector FeatureMaps::s1(Action a) const {
  Vector v = s1_(a);
  if (v.size() != d1_ || !v.allFinite()) throw EvaluationError("s1 feature invalid at action " + std::to_string(a));
  return v;
}

Vector FeatureMaps::t(const Covariate& x) const {
  if (x.size() != input_dim_) {
    std::ostringstream msg;
    msg << "covariate has dimension " << x.size() << ", feature maps '" << name_ << "' expect " << input_dim_;
    throw StructuralError(msg.str());
  }
  Vector v = t_(x);
  if (v.size() != dt_ || !v.allFinite()) throw EvaluationError("t(x) feature is invalid");
  return v;
}

Vector FeatureMaps::s0_bar() const {
  Vector s = Vector::Zero(d0_);
  for (Action a : actions_.labels()) s += s0(a);
  return s / static_cast<double>(actions_.size());
}

Vector FeatureMaps::s1_bar() const {
  Vector s = Vector::Zero(d1_);
  for (Action a : actions_.labels()) s += s1(a);
  return s / static_cast<double>(actions_.size());
}

PolicyComponent::PolicyComponent(FeatureMaps features)
    : features_(std::move(features)),
      psi0_(Vector::Zero(features_.s0_dim())),
      Psi1_(Matrix::Zero(features_.s1_dim(), features_.t_dim())) {}

PolicyComponent::PolicyComponent(FeatureMaps features, Vector psi0, Matrix Psi1)
    : features_(std::move(features)), psi0_(std::move(psi0)), Psi1_(std::move(Psi1)) {
  if (psi0_.size() != features_.s0_dim() || Psi1_.rows() != features_.s1_dim() ||
      Psi1_.cols() != features_.t_dim()) {
    std::ostringstream msg;
    msg << "policy parameters do not conform: psi0 has " << psi0_.size() << " entries (expected "
        << features_.s0_dim() << "), Psi1 is " << Psi1_.rows() << "x" << Psi1_.cols() << " (expected "
        << features_.s1_dim() << "x" << features_.t_dim() << ")";
    throw StructuralError(msg.str());
  }
}

Vector PolicyComponent::parameters() const {
  Vector psi(num_parameters());
  psi.head(psi0_.size()) = psi0_;
  Index k = psi0_.size();
  for (Index i = 0; i < Psi1_.rows(); ++i)
    for (Index j = 0; j < Psi1_.cols(); ++j) psi[k++] = Psi1_(i, j);
  return psi;
}

PolicyComponent PolicyComponent::with_parameters(const Vector& psi) const {
  if (psi.size() != num_parameters()) throw StructuralError("wrong number of policy parameters");
  Vector p0 = psi.head(psi0_.size());
  Matrix p1(Psi1_.rows(), Psi1_.cols());
  Index k = psi0_.size();
  for (Index i = 0; i < p1.rows(); ++i)
    for (Index j = 0; j < p1.cols(); ++j) p1(i, j) = psi[k++];
  return PolicyComponent(features_, std::move(p0), std::move(p1));
}

void PolicyComponent::check_input(const Covariate& x) const {
  if (x.size() != features_.input_dim()) throw StructuralError("covariate dimension does not match the policy features");
}

double PolicyComponent::g(const Covariate& x, Action a) const {
  check_input(x);
  return psi0_.dot(features_.s0(a)) + features_.s1(a).dot(Psi1_ * features_.t(x));
}

Vector PolicyComponent::gradient(const Covariate& x, Action a) const {
  check_input(x);
  const Vector s1 = features_.s1(a);
  const Vector t = features_.t(x);
  Vector grad(num_parameters());
  grad.head(psi0_.size()) = features_.s0(a);
  Index k = psi0_.size();
  for (Index i = 0; i < s1.size(); ++i)
    for (Index j = 0; j < t.size(); ++j) grad[k++] = s1[i] * t[j];
  return grad;
}

Matrix PolicyComponent::gradient_rows(const Covariate& x) const {
  Matrix rows(static_cast<Index>(actions().size()), num_parameters());
  for (std::size_t j = 0; j < actions().size(); ++j) rows.row(static_cast<Index>(j)) = gradient(x, actions()[j]);
  return rows;
}

Action PolicyComponent::greedy(const Covariate& x) const {
  std::vector<double> values;
  values.reserve(actions().size());
  for (Action a : actions().labels()) values.push_back(g(x, a));
  return actions()[argmax_action(values, actions(), "policy component")];
}

Policy PolicyComponent::policy() const {
  PolicyComponent copy = *this;
  return Policy(actions(), [copy](const Covariate& x) { return copy.greedy(x); });
}

double eval_g(const PolicyComponent& pc, const Covariate& x, Action a) { return pc.g(x, a); }

Vector eval_g_gradient(const PolicyComponent& pc, const Covariate& x, Action a) { return pc.gradient(x, a); }

NuisanceComponent NuisanceComponent::parametric(std::string basis_name, Index basis_dim, Basis basis, Vector alpha) {
  if (basis_dim < 1) throw StructuralError("a parametric nuisance needs a basis of dimension >= 1");
  NuisanceComponent n;
  n.kind_ = Kind::parametric_linear;
  n.name_ = std::move(basis_name);
  n.basis_dim_ = basis_dim;
  n.basis_ = std::move(basis);
  n.alpha_ = alpha.size() == 0 ? Vector::Zero(basis_dim) : std::move(alpha);
  if (n.alpha_.size() != basis_dim) throw StructuralError("nuisance alpha does not match the basis dimension");
  return n;
}

NuisanceComponent NuisanceComponent::linear_with_intercept(Index input_dim, Vector alpha) {
  return parametric("linear", input_dim + 1,
                    [input_dim](const Covariate& x) {
                      if (x.size() != input_dim) throw StructuralError("covariate dimension does not match the nuisance basis");
                      Vector b(input_dim + 1);
                      b.head(input_dim) = x;
                      b[input_dim] = 1.0;
                      return b;
                    },
                    std::move(alpha));
}

NuisanceComponent NuisanceComponent::fixed(std::string name, Function f) {
  NuisanceComponent n;
  n.kind_ = Kind::fixed_function;
  n.name_ = std::move(name);
  n.fixed_ = std::move(f);
  return n;
}

NuisanceComponent NuisanceComponent::absent() { return NuisanceComponent(); }

NuisanceComponent NuisanceComponent::with_parameters(const Vector& alpha) const {
  if (kind_ != Kind::parametric_linear) {
    if (alpha.size() != 0) throw StructuralError("only a parametric nuisance takes parameters");
    return *this;
  }
  if (alpha.size() != basis_dim_) throw StructuralError("nuisance alpha does not match the basis dimension");
  NuisanceComponent n = *this;
  n.alpha_ = alpha;
  return n;
}

double NuisanceComponent::f(const Covariate& x) const {
  switch (kind_) {
    case Kind::parametric_linear: return alpha_.dot(basis(x));
    case Kind::fixed_function: return fixed_(x);
    case Kind::absent: return 0.0;
  }
  return 0.0;
}

Vector NuisanceComponent::basis(const Covariate& x) const {
  if (kind_ != Kind::parametric_linear) return {};
  Vector b = basis_(x);
  if (b.size() != basis_dim_ || !b.allFinite()) throw EvaluationError("nuisance basis '" + name_ + "' is invalid");
  return b;
}

ModelQFunction::ModelQFunction(NuisanceComponent nuisance, PolicyComponent policy)
    : nuisance_(std::move(nuisance)), policy_(std::move(policy)) {}

double ModelQFunction::log_q(const Covariate& x, Action a) const { return nuisance_.f(x) + policy_.g(x, a); }

double ModelQFunction::q(const Covariate& x, Action a) const {
  const double v = std::exp(log_q(x, a));
  if (!std::isfinite(v) || v <= 0.0) {
    std::ostringstream msg;
    msg << "Q(x, " << a << ") = exp(" << log_q(x, a) << ") is not a finite positive number at x = (";
    for (Index i = 0; i < x.size(); ++i) msg << (i ? ", " : "") << x[i];
    msg << ")";
    throw EvaluationError(msg.str());
  }
  return v;
}

TabularQFunction to_tabular(const ModelQFunction& model, const std::vector<WeightedPoint>& grid) {
  std::vector<GridPoint> points;
  points.reserve(grid.size());
  for (const auto& wp : grid) {
    GridPoint p{wp.x, wp.weight, {}};
    for (Action a : model.actions().labels()) p.q.push_back(model.q(wp.x, a));
    points.push_back(std::move(p));
  }
  return TabularQFunction(model.actions(), std::move(points));
}

}  // namespace powerdtr
