#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "design.hpp"
#include "powerdtr/estimators.hpp"

namespace powerdtr {

std::vector<StageRecord> stage_records(const TrajectoryDataset& data, std::size_t t) {
  if (t >= data.num_stages()) throw StructuralError("stage index out of range");
  std::vector<StageRecord> out;
  out.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& s = data[i].stages[t];
    if (!s.propensity)
      throw InvalidRecordError("record '" + data[i].id + "' has no propensity at stage " + std::to_string(t + 1));
    out.push_back({data.history(i, t), s.a, s.y, *s.propensity});
  }
  return out;
}

std::string to_string(Method m) {
  switch (m) {
    case Method::gamma_mde: return "gamma";
    case Method::beta_mde: return "beta";
    case Method::ml: return "ml";
  }
  return "unknown";
}

Method method_from_string(const std::string& name) {
  if (name == "gamma" || name == "gamma_mde") return Method::gamma_mde;
  if (name == "beta" || name == "beta_mde") return Method::beta_mde;
  if (name == "ml" || name == "q_learning") return Method::ml;
  throw StructuralError("unknown method '" + name + "' (expected gamma, beta or ml)");
}

namespace detail {

Design build_design(const std::vector<StageRecord>& records, const PolicyComponent& pc,
                    const NuisanceComponent* nuisance) {
  if (records.empty()) throw InvalidRecordError("no records to fit");
  Design d;
  d.n = static_cast<Index>(records.size());
  d.m = static_cast<Index>(pc.actions().size());
  d.p = pc.num_parameters();
  d.k = nuisance ? nuisance->num_parameters() : 0;
  d.G.resize(d.n * d.m, d.p);
  d.B.resize(d.n, d.k);
  d.offset = Vector::Zero(d.n);
  d.w.resize(d.n);
  d.y.resize(d.n);
  d.obs.reserve(records.size());
  for (Index i = 0; i < d.n; ++i) {
    const auto& r = records[static_cast<std::size_t>(i)];
    if (!(r.p > 0.0) || !(r.p <= 1.0)) {
      std::ostringstream msg;
      msg << "record " << i + 1 << " has propensity " << r.p << " outside (0, 1]";
      throw InvalidRecordError(msg.str());
    }
    if (!(r.y >= 0.0) || !std::isfinite(r.y)) {
      std::ostringstream msg;
      msg << "record " << i + 1 << " has a negative or non-finite outcome";
      throw InvalidRecordError(msg.str());
    }
    if (!pc.actions().contains(r.a)) {
      std::ostringstream msg;
      msg << "record " << i + 1 << " has action " << r.a << " outside the action set";
      throw InvalidRecordError(msg.str());
    }
    d.G.middleRows(i * d.m, d.m) = pc.gradient_rows(r.x);
    d.obs.push_back(static_cast<Index>(pc.actions().index_of(r.a)));
    d.y[i] = r.y;
    d.w[i] = r.y / r.p;
    if (d.w[i] > kHeavyWeight) ++d.heavy_weights;
    if (nuisance) {
      if (nuisance->kind() == NuisanceComponent::Kind::parametric_linear)
        d.B.row(i) = nuisance->basis(r.x).transpose();
      else
        d.offset[i] = nuisance->f(r.x);
    }
  }
  return d;
}

namespace {

Vector linear_predictor(const Design& d, const Vector& theta) {
  Vector eta = d.G * theta.tail(d.p);
  Vector base = d.offset;
  if (d.k) base += d.B * theta.head(d.k);
  for (Index i = 0; i < d.n; ++i) eta.segment(i * d.m, d.m).array() += base[i];
  return eta;
}

}  // namespace

double gamma_sum(const Design& d, const Vector& psi, double gamma, Vector* coef) {
  const Vector g = d.G * psi;
  const double c = gamma + 1.0;
  if (coef) coef->setZero(d.n * d.m);
  double total = 0.0;
  for (Index i = 0; i < d.n; ++i) {
    const double w = d.w[i];
    if (w == 0.0) continue;
    const Index base = i * d.m;
    double hi = -std::numeric_limits<double>::infinity();
    for (Index a = 0; a < d.m; ++a) hi = std::max(hi, c * g[base + a]);
    double s = 0.0;
    for (Index a = 0; a < d.m; ++a) s += std::exp(c * g[base + a] - hi);
    const double lse = hi + std::log(s);
    const double term = std::exp(gamma * g[base + d.obs[i]] - gamma / c * lse);
    total -= w * term / gamma;
    if (coef) {
      for (Index a = 0; a < d.m; ++a) (*coef)[base + a] = w * term * std::exp(c * g[base + a] - lse);
      (*coef)[base + d.obs[i]] -= w * term;
    }
  }
  return total;
}

namespace {

// True when the observed feature row equals the action average, so the record's unweighted term is exactly zero.
bool centred_vanishes(const Design& d, Index i) {
  const Index base = i * d.m;
  const auto row = d.G.row(base + d.obs[i]);
  const double diff = (row - d.G.middleRows(base, d.m).colwise().mean()).cwiseAbs().maxCoeff();
  return diff <= 1e-12 * std::max(1.0, row.cwiseAbs().maxCoeff());
}

}  // namespace

void gamma_unweighted_coef(const Design& d, const Vector& psi, Vector& coef) {
  const Vector g = d.G * psi;
  coef.setZero(d.n * d.m);
  for (Index i = 0; i < d.n; ++i) {
    const double w = d.w[i];
    if (w == 0.0) continue;
    const Index base = i * d.m;
    if (centred_vanishes(d, i)) continue;
    const double f = w * std::exp(-g[base + d.obs[i]]);
    for (Index a = 0; a < d.m; ++a) coef[base + a] = f / static_cast<double>(d.m);
    coef[base + d.obs[i]] -= f;
  }
}

double gamma_gm_sum(const Design& d, const Vector& psi, Vector* coef) {
  const Vector g = d.G * psi;
  if (coef) coef->setZero(d.n * d.m);
  double total = 0.0;
  for (Index i = 0; i < d.n; ++i) {
    const double w = d.w[i];
    if (w == 0.0 || centred_vanishes(d, i)) continue;
    const Index base = i * d.m;
    const double f = w * std::exp(g.segment(base, d.m).mean() - g[base + d.obs[i]]);
    total += f;
    if (!coef) continue;
    for (Index a = 0; a < d.m; ++a) (*coef)[base + a] = f / static_cast<double>(d.m);
    (*coef)[base + d.obs[i]] -= f;
  }
  return total;
}

Matrix gamma_unweighted_jacobian(const Design& d, const Vector& psi) {
  const Vector g = d.G * psi;
  Matrix J = Matrix::Zero(d.p, d.p);
  Vector diff(d.p);
  for (Index i = 0; i < d.n; ++i) {
    const double w = d.w[i];
    if (w == 0.0) continue;
    const Index base = i * d.m;
    const Index row = base + d.obs[i];
    if (centred_vanishes(d, i)) continue;
    const double f = w * std::exp(-g[row]);
    diff = d.G.row(row).transpose() - d.G.middleRows(base, d.m).colwise().mean().transpose();
    J.noalias() -= f * diff * d.G.row(row);
  }
  return J / static_cast<double>(d.n);
}

double beta_sum(const Design& d, const Vector& theta, double beta, Vector* coef) {
  const Vector eta = linear_predictor(d, theta);
  if (coef) coef->setZero(d.n * d.m);
  double total = 0.0;
  for (Index i = 0; i < d.n; ++i) {
    const Index base = i * d.m;
    const double w = d.w[i];
    const Index A = base + d.obs[i];
    for (Index a = 0; a < d.m; ++a) {
      const double e = beta == 0.0 ? std::exp(eta[base + a]) : std::exp((beta + 1.0) * eta[base + a]);
      total += beta == 0.0 ? e : e / (beta + 1.0);
      if (coef) (*coef)[base + a] = e;
    }
    if (w != 0.0) {
      if (beta == 0.0) {
        total -= w * eta[A];
        if (coef) (*coef)[A] -= w;
      } else {
        const double e = std::exp(beta * eta[A]);
        total -= w * e / beta;
        if (coef) (*coef)[A] -= w * e;
      }
    }
  }
  return total;
}

double ml_sum(const Design& d, const Vector& theta, OutcomeFamily family, Vector* coef) {
  const Vector eta = linear_predictor(d, theta);
  if (coef) coef->setZero(d.n * d.m);
  double total = 0.0;
  for (Index i = 0; i < d.n; ++i) {
    const Index A = i * d.m + d.obs[i];
    const double y = d.y[i];
    double score = 0.0;
    if (family == OutcomeFamily::exponential) {
      const double r = y == 0.0 ? 0.0 : y * std::exp(-eta[A]);
      total += eta[A] + r;
      score = 1.0 - r;
    } else {
      const double q = std::exp(eta[A]);
      total += q - y * eta[A];
      score = q - y;
    }
    if (coef) (*coef)[A] = score;
  }
  return total;
}

Vector coef_gradient(const Design& d, const Vector& coef, bool with_alpha) {
  const Index ka = with_alpha ? d.k : 0;
  Vector grad(ka + d.p);
  grad.tail(d.p).noalias() = d.G.transpose() * coef;
  if (ka) {
    Vector rs(d.n);
    for (Index i = 0; i < d.n; ++i) rs[i] = coef.segment(i * d.m, d.m).sum();
    grad.head(ka).noalias() = d.B.transpose() * rs;
  }
  return grad;
}

Matrix coef_scores(const Design& d, const Vector& coef, bool with_alpha) {
  const Index ka = with_alpha ? d.k : 0;
  Matrix S(d.n, ka + d.p);
  for (Index i = 0; i < d.n; ++i) {
    const auto c = coef.segment(i * d.m, d.m);
    S.row(i).tail(d.p).noalias() = -c.transpose() * d.G.middleRows(i * d.m, d.m);
    if (ka) S.row(i).head(ka) = -c.sum() * d.B.row(i);
  }
  return S;
}

}  // namespace detail

namespace {

void require_gamma(double gamma) {
  if (gamma == 0.0) throw SingularIndexError("gamma = 0 is singular for the gamma-power loss");
  if (!std::isfinite(gamma)) throw SingularIndexError("gamma must be finite");
}

void require_beta(double beta) {
  if (beta == -1.0) throw SingularIndexError("beta = -1 is singular for the beta-power loss");
  if (!std::isfinite(beta)) throw SingularIndexError("beta must be finite");
}

Vector join(const Vector& alpha, const Vector& psi) {
  Vector theta(alpha.size() + psi.size());
  theta << alpha, psi;
  return theta;
}

void check_sizes(const detail::Design& d, const Vector& alpha, const Vector& psi) {
  if (alpha.size() != d.k || psi.size() != d.p) throw StructuralError("parameter vector sizes do not match the model");
}

}  // namespace

double gamma_loss(const Vector& psi, const std::vector<StageRecord>& records, const PolicyComponent& pc,
                  double gamma) {
  require_gamma(gamma);
  if (gamma == -1.0)
    throw SingularIndexError("gamma = -1 is singular for the gamma-power loss; fit it through the unweighted estimating equation");
  const auto d = detail::build_design(records, pc);
  if (psi.size() != d.p) throw StructuralError("psi has the wrong length");
  return detail::gamma_sum(d, psi, gamma, nullptr) / static_cast<double>(d.n);
}

double gamma_loss(const Vector& psi, const TrajectoryDataset& data, const PolicyComponent& pc, double gamma) {
  return gamma_loss(psi, stage_records(data, 0), pc, gamma);
}

Vector gamma_estimating_function(const Vector& psi, const StageRecord& record, const PolicyComponent& pc,
                                 double gamma) {
  require_gamma(gamma);
  const auto d = detail::build_design({record}, pc);
  if (psi.size() != d.p) throw StructuralError("psi has the wrong length");
  Vector coef;
  if (gamma == -1.0)
    detail::gamma_unweighted_coef(d, psi, coef);
  else
    detail::gamma_sum(d, psi, gamma, &coef);
  return detail::coef_scores(d, coef, false).row(0).transpose();
}

double beta_loss(const Vector& alpha, const Vector& psi, const std::vector<StageRecord>& records,
                 const ModelQFunction& model, double beta) {
  require_beta(beta);
  const auto d = detail::build_design(records, model.policy_part(), &model.nuisance());
  check_sizes(d, alpha, psi);
  return detail::beta_sum(d, join(alpha, psi), beta, nullptr) / static_cast<double>(d.n);
}

double ml_loss(const Vector& alpha, const Vector& psi, const std::vector<StageRecord>& records,
               const ModelQFunction& model, OutcomeFamily family) {
  const auto d = detail::build_design(records, model.policy_part(), &model.nuisance());
  check_sizes(d, alpha, psi);
  const double loss = detail::ml_sum(d, join(alpha, psi), family, nullptr) / static_cast<double>(d.n);
  if (!std::isfinite(loss)) throw EvaluationError("ML loss is not finite (Q overflowed or underflowed)");
  return loss;
}

Vector ml_estimating_function(const Vector& alpha, const Vector& psi, const StageRecord& record,
                              const ModelQFunction& model, OutcomeFamily family) {
  const auto d = detail::build_design({record}, model.policy_part(), &model.nuisance());
  check_sizes(d, alpha, psi);
  Vector coef;
  detail::ml_sum(d, join(alpha, psi), family, &coef);
  return detail::coef_scores(d, coef, true).row(0).transpose();
}

}  // namespace powerdtr
