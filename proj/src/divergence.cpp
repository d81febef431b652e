#include "powerdtr/divergence.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace powerdtr {

std::string to_string(Family f) {
  switch (f) {
    case Family::gamma_power: return "gamma";
    case Family::beta_power: return "beta";
    case Family::ekl: return "ekl";
    case Family::nkl: return "nkl";
  }
  return "unknown";
}

Family family_from_string(const std::string& name) {
  if (name == "gamma" || name == "gamma_power") return Family::gamma_power;
  if (name == "beta" || name == "beta_power") return Family::beta_power;
  if (name == "ekl") return Family::ekl;
  if (name == "nkl") return Family::nkl;
  throw StructuralError("unknown divergence family '" + name + "'");
}

namespace {

double log_sum_exp(std::span<const double> v) {
  const double hi = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(hi)) return hi;
  double s = 0.0;
  for (double x : v) s += std::exp(x - hi);
  return hi + std::log(s);
}

std::vector<double> logs(const std::vector<double>& q) {
  std::vector<double> out(q.size());
  std::transform(q.begin(), q.end(), out.begin(), [](double v) { return std::log(v); });
  return out;
}

// log of sum_a q0 q1^g / (sum_a q1^{1+g})^{g/(1+g)} at one grid point.
double log_gamma_term(const std::vector<double>& l0, const std::vector<double>& l1, double gamma) {
  const std::size_t m = l0.size();
  // The term is invariant to shifting l1, so centre it to keep large |gamma| free of cancellation.
  const double c = *std::max_element(l1.begin(), l1.end());
  std::vector<double> num(m), den(m);
  for (std::size_t a = 0; a < m; ++a) {
    num[a] = l0[a] + gamma * (l1[a] - c);
    den[a] = (1.0 + gamma) * (l1[a] - c);
  }
  return log_sum_exp(num) - gamma / (1.0 + gamma) * log_sum_exp(den);
}

void require_regular_gamma(double gamma) {
  if (gamma == 0.0)
    throw SingularIndexError("gamma = 0 is singular; use nkl_divergence (the gamma -> 0 limit)");
  if (gamma == -1.0)
    throw SingularIndexError("gamma = -1 is singular; use gm_limit_divergence (the gamma -> -1 limit)");
  if (!std::isfinite(gamma)) throw SingularIndexError("gamma must be finite");
}

void require_regular_beta(double beta) {
  if (beta == -1.0) throw SingularIndexError("beta = -1 is singular for the beta-power divergence");
  if (!std::isfinite(beta)) throw SingularIndexError("beta must be finite");
}

double finalize(double value, const char* what) {
  if (std::isnan(value)) throw EvaluationError(std::string(what) + " evaluated to NaN");
  if (value >= 0.0) return value;
  if (value >= -kClampTolerance) return 0.0;
  std::ostringstream msg;
  msg << what << " is negative beyond rounding (" << value << ")";
  throw ConsistencyError(msg.str());
}

}  // namespace

double gamma_cross_entropy(const TabularQFunction& q0, const TabularQFunction& q1, double gamma) {
  require_regular_gamma(gamma);
  require_same_grid(q0, q1);
  double h = 0.0;
  for (std::size_t i = 0; i < q0.size(); ++i) {
    h += q0.point(i).weight * std::exp(log_gamma_term(logs(q0.point(i).q), logs(q1.point(i).q), gamma));
  }
  return -h / gamma;
}

double gamma_divergence_scaled(const TabularQFunction& q0, const TabularQFunction& q1, double gamma,
                               double log_scale) {
  require_regular_gamma(gamma);
  require_same_grid(q0, q1);
  double d = 0.0;
  for (std::size_t i = 0; i < q0.size(); ++i) {
    const auto l0 = logs(q0.point(i).q);
    const auto l1 = logs(q1.point(i).q);
    const double diag = log_gamma_term(l0, l0, gamma);
    const double cross = log_gamma_term(l0, l1, gamma);
    // -(1/g) [e^cross - e^diag] = -(1/g) e^diag expm1(cross - diag)
    d += q0.point(i).weight * (-1.0 / gamma) * std::exp(diag + log_scale) * std::expm1(cross - diag);
  }
  if (std::isinf(d)) throw EvaluationError("gamma divergence overflowed; evaluate it on a log scale");
  return finalize(d, "gamma divergence");
}

double gamma_divergence(const TabularQFunction& q0, const TabularQFunction& q1, double gamma) {
  return gamma_divergence_scaled(q0, q1, gamma, 0.0);
}

double nkl_divergence(const TabularQFunction& q0, const TabularQFunction& q1) {
  require_same_grid(q0, q1);
  double d = 0.0;
  for (std::size_t i = 0; i < q0.size(); ++i) {
    const auto l0 = logs(q0.point(i).q);
    const auto l1 = logs(q1.point(i).q);
    const double n0 = log_sum_exp(l0);
    const double n1 = log_sum_exp(l1);
    double s = 0.0;
    for (std::size_t a = 0; a < l0.size(); ++a) s += q0.q(i, a) * ((l0[a] - n0) - (l1[a] - n1));
    d += q0.point(i).weight * s;
  }
  return finalize(d, "normalized KL divergence");
}

double gm_limit_divergence(const TabularQFunction& q0, const TabularQFunction& q1) {
  require_same_grid(q0, q1);
  const double m = static_cast<double>(q0.num_actions());
  double d = 0.0;
  for (std::size_t i = 0; i < q0.size(); ++i) {
    const auto l0 = logs(q0.point(i).q);
    const auto l1 = logs(q1.point(i).q);
    const double log_gm0 = std::accumulate(l0.begin(), l0.end(), 0.0) / m;
    const double log_gm1 = std::accumulate(l1.begin(), l1.end(), 0.0) / m;
    double ratio = 0.0;
    for (std::size_t a = 0; a < l0.size(); ++a) ratio += std::exp(l0[a] - l1[a] + log_gm1);
    d += q0.point(i).weight * (ratio / m - std::exp(log_gm0));
  }
  return finalize(d, "geometric-mean limit divergence");
}

namespace {

// Largest and runner-up values; a tie means the argmax is not strict.
bool strict_argmax(const std::vector<double>& q) {
  std::vector<double> sorted = q;
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  return sorted[0] - sorted[1] > 1e-12 * sorted[0];
}

}  // namespace

std::vector<ValueGapPoint> value_gap_limit(const TabularQFunction& q0, const TabularQFunction& q1,
                                           const std::vector<double>& gammas) {
  require_same_grid(q0, q1);
  for (std::size_t i = 0; i < q0.size(); ++i) {
    if (!strict_argmax(q0.point(i).q) || !strict_argmax(q1.point(i).q))
      throw DegenerateError("value-gap limit needs a strict maximizer at every grid point (tie at point " +
                            std::to_string(i) + ")");
  }
  double gap = 0.0;
  for (std::size_t i = 0; i < q0.size(); ++i) {
    const auto best0 = q0.actions().index_of(greedy_action(q0, i));
    const auto best1 = q0.actions().index_of(greedy_action(q1, i));
    gap += q0.point(i).weight * (q0.q(i, best0) - q0.q(i, best1));
  }
  std::vector<ValueGapPoint> out;
  out.reserve(gammas.size());
  for (double g : gammas) out.push_back({g, g * gamma_divergence(q0, q1, g), gap});
  return out;
}

double beta_cross_entropy(const TabularQFunction& q0, const TabularQFunction& q1, double beta) {
  require_same_grid(q0, q1);
  if (beta == 0.0) {
    // beta -> 0 limit up to the additive constant that cancels in the divergence.
    double h = 0.0;
    for (std::size_t i = 0; i < q0.size(); ++i) {
      double s = 0.0;
      for (std::size_t a = 0; a < q0.num_actions(); ++a) s += q1.q(i, a) - q0.q(i, a) * std::log(q1.q(i, a));
      h += q0.point(i).weight * s;
    }
    return h;
  }
  require_regular_beta(beta);
  double h = 0.0;
  for (std::size_t i = 0; i < q0.size(); ++i) {
    double s = 0.0;
    for (std::size_t a = 0; a < q0.num_actions(); ++a) {
      const double v1 = q1.q(i, a);
      s += std::pow(v1, beta + 1.0) / (beta + 1.0) - q0.q(i, a) * std::pow(v1, beta) / beta;
    }
    h += q0.point(i).weight * s;
  }
  return h;
}

double beta_divergence(const TabularQFunction& q0, const TabularQFunction& q1, double beta) {
  if (beta == 0.0) return ekl_divergence(q0, q1);
  require_regular_beta(beta);
  require_same_grid(q0, q1);
  double d = 0.0;
  for (std::size_t i = 0; i < q0.size(); ++i) {
    double s = 0.0;
    for (std::size_t a = 0; a < q0.num_actions(); ++a) {
      const double l0 = std::log(q0.q(i, a));
      const double r = std::log(q1.q(i, a)) - l0;
      // q0^{b+1} [ r^{b+1}/(b+1) - r^b/b + 1/(b(b+1)) ] with r = q1/q0; the constants cancel exactly.
      const double phi = std::expm1((beta + 1.0) * r) / (beta + 1.0) - std::expm1(beta * r) / beta;
      s += std::exp((beta + 1.0) * l0) * phi;
    }
    d += q0.point(i).weight * s;
  }
  return finalize(d, "beta divergence");
}

double ekl_divergence(const TabularQFunction& q0, const TabularQFunction& q1) {
  require_same_grid(q0, q1);
  double d = 0.0;
  for (std::size_t i = 0; i < q0.size(); ++i) {
    double s = 0.0;
    for (std::size_t a = 0; a < q0.num_actions(); ++a) {
      const double r = std::log(q1.q(i, a) / q0.q(i, a));
      s += q0.q(i, a) * (std::expm1(r) - r);
    }
    d += q0.point(i).weight * s;
  }
  return finalize(d, "extended KL divergence");
}

UGenerator beta_power_generator(double beta) {
  if (beta == 0.0 || beta == -1.0) throw SingularIndexError("beta-power generator needs beta outside {0, -1}");
  return UGenerator{
      [beta](double t) { return std::pow(1.0 + beta * t, (beta + 1.0) / beta) / (beta + 1.0); },
      [beta](double q) { return (std::pow(q, beta) - 1.0) / beta; },
  };
}

double u_cross_entropy(const TabularQFunction& q0, const TabularQFunction& q1, const UGenerator& gen) {
  require_same_grid(q0, q1);
  double h = 0.0;
  for (std::size_t i = 0; i < q0.size(); ++i) {
    double s = 0.0;
    for (std::size_t a = 0; a < q0.num_actions(); ++a) {
      const double xi = gen.u_inverse(q1.q(i, a));
      s += gen.U(xi) - q0.q(i, a) * xi;
    }
    h += q0.point(i).weight * s;
  }
  return h;
}

double u_divergence(const TabularQFunction& q0, const TabularQFunction& q1, const UGenerator& gen) {
  return finalize(u_cross_entropy(q0, q1, gen) - u_cross_entropy(q0, q0, gen), "U-divergence");
}

HarmonicCheck harmonic_identity_check(const TabularQFunction& q) {
  const double m = static_cast<double>(q.num_actions());
  double rhs = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    double inv = 0.0;
    for (double v : q.point(i).q) inv += 1.0 / v;
    rhs += q.point(i).weight / (m * inv);
  }
  return {gamma_cross_entropy(q, q, -2.0), 0.5 * m * rhs};
}

DivergenceResult evaluate_divergence(const DivergenceSpec& spec, const TabularQFunction& q0,
                                     const TabularQFunction& q1) {
  require_same_grid(q0, q1);
  DivergenceResult r;
  r.family = spec.family;
  r.index = spec.index;
  auto nkl_entropy = [](const TabularQFunction& a, const TabularQFunction& b) {
    double h = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      const auto lb = logs(b.point(i).q);
      const double nb = log_sum_exp(lb);
      double s = 0.0;
      for (std::size_t j = 0; j < lb.size(); ++j) s -= a.q(i, j) * (lb[j] - nb);
      h += a.point(i).weight * s;
    }
    return h;
  };
  switch (spec.family) {
    case Family::gamma_power:
      if (spec.index == 0.0) {
        r.family = Family::nkl;
        r.note = "gamma = 0 dispatched to the normalized KL limit";
        r.lhs_entropy = nkl_entropy(q0, q1);
        r.diag_entropy = nkl_entropy(q0, q0);
        r.value = nkl_divergence(q0, q1);
      } else if (spec.index == -1.0) {
        r.note = "gamma = -1 dispatched to the geometric-mean limit of m^{-1/(1+gamma)} D_gamma";
        const double m = static_cast<double>(q0.num_actions());
        double lhs = 0.0, diag = 0.0;
        for (std::size_t i = 0; i < q0.size(); ++i) {
          const auto l0 = logs(q0.point(i).q);
          const auto l1 = logs(q1.point(i).q);
          const double g0 = std::exp(std::accumulate(l0.begin(), l0.end(), 0.0) / m);
          const double g1 = std::exp(std::accumulate(l1.begin(), l1.end(), 0.0) / m);
          double ratio = 0.0;
          for (std::size_t a = 0; a < l0.size(); ++a) ratio += std::exp(l0[a] - l1[a]);
          lhs += q0.point(i).weight * ratio / m * g1;
          diag += q0.point(i).weight * g0;
        }
        r.lhs_entropy = lhs;
        r.diag_entropy = diag;
        r.value = gm_limit_divergence(q0, q1);
      } else {
        r.lhs_entropy = gamma_cross_entropy(q0, q1, spec.index);
        r.diag_entropy = gamma_cross_entropy(q0, q0, spec.index);
        r.value = gamma_divergence(q0, q1, spec.index);
      }
      break;
    case Family::beta_power:
      if (spec.index == 0.0) {
        r.family = Family::ekl;
        r.note = "beta = 0 dispatched to the extended KL divergence";
      }
      r.lhs_entropy = beta_cross_entropy(q0, q1, spec.index);
      r.diag_entropy = beta_cross_entropy(q0, q0, spec.index);
      r.value = beta_divergence(q0, q1, spec.index);
      break;
    case Family::ekl:
      r.lhs_entropy = beta_cross_entropy(q0, q1, 0.0);
      r.diag_entropy = beta_cross_entropy(q0, q0, 0.0);
      r.value = ekl_divergence(q0, q1);
      break;
    case Family::nkl:
      r.lhs_entropy = nkl_entropy(q0, q1);
      r.diag_entropy = nkl_entropy(q0, q0);
      r.value = nkl_divergence(q0, q1);
      break;
  }
  return r;
}

}  // namespace powerdtr
