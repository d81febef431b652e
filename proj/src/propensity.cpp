#include <algorithm>
#include <cmath>
#include <sstream>

#include "powerdtr/estimators.hpp"

namespace powerdtr {

PropensityModel::PropensityModel(ActionSet actions, Vector center, Vector scale, std::vector<Index> columns,
                                 Matrix coef)
    : actions_(std::move(actions)),
      center_(std::move(center)),
      scale_(std::move(scale)),
      columns_(std::move(columns)),
      coef_(std::move(coef)) {}

namespace {

Vector standardized_row(const Covariate& x, const Vector& center, const Vector& scale,
                        const std::vector<Index>& columns) {
  Vector z(static_cast<Index>(columns.size()) + 1);
  z[0] = 1.0;
  for (std::size_t j = 0; j < columns.size(); ++j) {
    const Index c = columns[j];
    z[static_cast<Index>(j) + 1] = (x[c] - center[c]) / scale[c];
  }
  return z;
}

// Softmax over [0, coef * z].
Vector softmax_probs(const Matrix& coef, const Vector& z) {
  Vector logits(coef.rows() + 1);
  logits[0] = 0.0;
  logits.tail(coef.rows()) = coef * z;
  const double hi = logits.maxCoeff();
  Vector e = (logits.array() - hi).exp().matrix();
  return e / e.sum();
}

}  // namespace

std::vector<double> PropensityModel::probabilities(const Covariate& x) const {
  if (x.size() != center_.size()) throw StructuralError("covariate dimension does not match the propensity model");
  const Vector p = softmax_probs(coef_, standardized_row(x, center_, scale_, columns_));
  std::vector<double> out(static_cast<std::size_t>(p.size()));
  for (Index j = 0; j < p.size(); ++j)
    out[static_cast<std::size_t>(j)] = std::clamp(p[j], kPropensityClamp, 1.0 - kPropensityClamp);
  return out;
}

double PropensityModel::probability(const Covariate& x, Action a) const {
  return probabilities(x)[actions_.index_of(a)];
}

PropensityModel fit_propensity(const TrajectoryDataset& data, std::size_t t) {
  if (t >= data.num_stages()) throw StructuralError("stage index out of range");
  const auto observed = data.observed_actions(t);
  if (observed.size() < 2)
    throw DegenerateError("propensity model needs at least two observed actions at stage " + std::to_string(t + 1));
  return fit_propensity(data, t, ActionSet(observed));
}

PropensityModel fit_propensity(const TrajectoryDataset& data, std::size_t t, const ActionSet& actions) {
  if (t >= data.num_stages()) throw StructuralError("stage index out of range");
  const auto observed = data.observed_actions(t);
  for (Action a : actions.labels()) {
    if (std::find(observed.begin(), observed.end(), a) == observed.end())
      throw DegenerateError("action " + std::to_string(a) + " is never observed at stage " + std::to_string(t + 1) +
                            "; its propensity cannot be estimated");
  }
  const auto n = static_cast<Index>(data.size());
  const Index dim = data.history_dim(t);
  Matrix X(n, dim);
  std::vector<Index> labels(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    X.row(i) = data.history(static_cast<std::size_t>(i), t).transpose();
    const Action a = data[static_cast<std::size_t>(i)].stages[t].a;
    if (!actions.contains(a)) throw InvalidRecordError("record '" + data[static_cast<std::size_t>(i)].id + "' has an unknown action");
    labels[static_cast<std::size_t>(i)] = static_cast<Index>(actions.index_of(a));
  }
  Vector center = X.colwise().mean().transpose();
  Vector scale = ((X.rowwise() - center.transpose()).array().square().colwise().sum() / static_cast<double>(n))
                     .sqrt()
                     .matrix()
                     .transpose();
  std::vector<Index> columns;
  for (Index j = 0; j < dim; ++j)
    if (scale[j] > 1e-12 * std::max(1.0, std::abs(center[j]))) columns.push_back(j);

  Matrix Z(n, static_cast<Index>(columns.size()) + 1);
  for (Index i = 0; i < n; ++i) Z.row(i) = standardized_row(X.row(i).transpose(), center, scale, columns).transpose();

  const Index m = static_cast<Index>(actions.size());
  const Index q = Z.cols();
  auto unpack = [m, q](const Vector& v) { return Eigen::Map<const Matrix>(v.data(), m - 1, q); };
  Objective nll = [&](const Vector& v, Vector* grad) {
    const Matrix coef = unpack(v);
    double total = 0.0;
    Matrix g = Matrix::Zero(m - 1, q);
    for (Index i = 0; i < n; ++i) {
      const Vector p = softmax_probs(coef, Z.row(i).transpose());
      const Index a = labels[static_cast<std::size_t>(i)];
      total -= std::log(p[a]);
      if (grad) {
        Vector r = p.tail(m - 1);
        if (a > 0) r[a - 1] -= 1.0;
        g += r * Z.row(i);
      }
    }
    if (grad) *grad = Eigen::Map<const Vector>(g.data(), g.size()) / static_cast<double>(n);
    return total / static_cast<double>(n);
  };
  OptimizeOptions opts;
  opts.max_iters = 1000;
  const OptimizeResult o = bfgs(nll, Vector::Zero((m - 1) * q), opts);

  const Matrix coef = unpack(o.x);
  PropensityModel model(actions, center, scale, columns, coef);
  if (!o.converged) model.warnings.push_back("propensity fit did not converge (" + o.message + "); possible separation");
  double lowest = 1.0;
  for (Index i = 0; i < n; ++i) lowest = std::min(lowest, softmax_probs(coef, Z.row(i).transpose()).minCoeff());
  if (lowest < kPropensityClamp) {
    std::ostringstream msg;
    msg << "separation at stage " << t + 1 << ": fitted probabilities down to " << lowest << " were clamped at "
        << kPropensityClamp;
    model.warnings.push_back(msg.str());
  }
  return model;
}

TrajectoryDataset with_fitted_propensities(const TrajectoryDataset& data, std::vector<std::string>* warnings) {
  std::vector<Trajectory> out = data.trajectories();
  for (std::size_t t = 0; t < data.num_stages(); ++t) {
    const PropensityModel model = fit_propensity(data, t);
    if (warnings) warnings->insert(warnings->end(), model.warnings.begin(), model.warnings.end());
    for (std::size_t i = 0; i < out.size(); ++i) {
      auto& s = out[i].stages[t];
      s.propensity = model.probability(data.history(i, t), s.a);
    }
  }
  return TrajectoryDataset(std::move(out));
}

}  // namespace powerdtr
